"""Multi-agent trajectory prediction with graph dual attention and kinematic decoding."""
