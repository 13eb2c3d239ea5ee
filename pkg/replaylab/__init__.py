"""Experience-replay laboratory: replay capacity, oldest-policy age and replay ratio
as independent control factors for DQN/Rainbow-style agents on toy environments."""

__version__ = "0.1.0"
