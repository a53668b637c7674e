"""Teacher-student distillation and domain-adversarial adaptation for
cross-subject EEG emotion recognition, on a small numpy autodiff engine."""

__version__ = "0.1.0"
