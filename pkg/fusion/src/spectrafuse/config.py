"""Architecture and training-schedule configuration."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ArchitectureConfig:
    """Fusion network layout.

    The image branch is a 14-layer deep-stem residual net truncated at a
    linear bottleneck projection; the clinical branch is two fully
    connected blocks (linear, batch norm, ELU, dropout) of widths 50 and
    30 followed by a linear head whose width must equal the image
    bottleneck. Their batch-normalized bottlenecks are concatenated into
    one fused block before the 2-class head.
    """

    input_channels: int = 100  # 100 for spectral tensors, 3 for RGB
    n_clinical: int = 0  # 0 disables the clinical branch
    bottleneck_units: int = 10
    clinical_block_sizes: tuple[int, int] = (50, 30)
    clinical_head_units: int = 10
    dropout: float = 0.1
    width_factor: float = 1.0  # shrink stage widths for toy runs
    n_classes: int = 2

    def __post_init__(self):
        if self.input_channels not in (3, 100):
            raise ValueError(f"input_channels must be 3 or 100, got {self.input_channels}")
        if self.n_clinical and self.clinical_head_units != self.bottleneck_units:
            raise ValueError(
                f"clinical head width {self.clinical_head_units} must match the "
                f"image bottleneck width {self.bottleneck_units}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class TrainingSchedule:
    """Optimization constants; defaults are the full-scale settings."""

    learning_rate: float = 1e-3
    lr_decay_gamma: float = 0.99
    weight_decay: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epochs: int = 10
    images_per_epoch: int = 500
    batch_size: int = 32
    swa_last_epochs: int = 2
    rotation_degrees: float = 180.0
    flip_probability: float = 0.5
    augment: bool = True

    def toy(self, epochs: int = 3, images_per_epoch: int = 64,
            batch_size: int = 16) -> "TrainingSchedule":
        """Scaled-down copy for CI-sized runs; optimizer constants unchanged."""
        return TrainingSchedule(
            learning_rate=self.learning_rate,
            lr_decay_gamma=self.lr_decay_gamma,
            weight_decay=self.weight_decay,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            epochs=epochs,
            images_per_epoch=images_per_epoch,
            batch_size=batch_size,
            swa_last_epochs=min(self.swa_last_epochs, epochs),
            rotation_degrees=self.rotation_degrees,
            flip_probability=self.flip_probability,
            augment=self.augment,
        )
