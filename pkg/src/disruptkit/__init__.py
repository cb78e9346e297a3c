"""disruptkit: adversarial disruption of conditional image translation.

Attacks (FGSM / I-FGSM / PGD, class-transferable and identity-target
variants), blur-evading attacks, blur and adversarial-training defenses, a
desk-scale conditional translator, a procedural paired dataset, and an
experiment harness with a CLI.
"""

__version__ = "0.1.0"

from .core import (
    DISRUPTION_THRESHOLD,
    clip_to_ball,
    is_disrupted,
    l1_distance,
    l2_distance,
    linf_norm,
    percent_disrupted,
)
from .model import (
    ClassCode,
    ConditionalGenerator,
    Discriminator,
    DiscriminatorConfig,
    GeneratorConfig,
    LossSpec,
    init_discriminator,
    init_generator,
    load_weights,
    save_weights,
)
from .attacks import (
    AttackConfig,
    DisruptionResult,
    TargetSpec,
    disrupt,
    fgsm_disrupt,
    feature_level_disrupt,
    identity_target_disrupt,
    ifgsm_disrupt,
    iterative_class_transfer_disrupt,
    joint_class_transfer_disrupt,
    pgd_disrupt,
)
from .defenses import (
    AdvTrainConfig,
    BlurSpec,
    TrainConfig,
    attack_through_blur,
    blur,
    eot_blur_disrupt,
    spread_spectrum_disrupt,
    train_gan,
    train_gan_gd_adv,
    train_gan_generator_adv,
)
from .data import DatasetConfig, Sample, dataset_split, generate_sample
