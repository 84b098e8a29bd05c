"""Energy-guided SDE sampling for unpaired domain translation on toy data.

Library layout:

- autodiff, rng: reverse-mode tape over a fixed primitive set; counter-based
  random streams
- sde: the variance-preserving schedule, perturbation kernels and step rules
- scores: exact mixture scores and a trainable noise predictor
- extractors: low-pass filter and time-dependent domain classifier
- energy: the two-expert guidance energy and its exact gradient
- samplers: guided translation plus the unguided baselines
- poe: lattice verification that one guided step is a product of experts
- metrics: L2 / PSNR / SSIM and the Fréchet realism proxy
- datasets, config, experiment, reporting, cli: the workbench
"""

from .autodiff import Tape, reverse_gradient
from .datasets import ToyDomainSpec, make_toy_domains
from .energy import EnergySpec, ExpertTerm, energy_gradient, energy_value
from .extractors import DomainClassifier, LowPassFilter, low_pass, train_domain_classifier
from .metrics import frechet_distance, l2, psnr, ssim
from .rng import RandomStream, gaussian
from .samplers import (Models, TranslationConfig, egsde_repeat, egsde_translate,
                       ilvr_translate, sdedit_translate, translate)
from .scores import (GaussianMixture, GmmScoreField, MixtureComponent,
                     NoisePredictor, PredictorScoreField, gmm_score,
                     train_noise_predictor)
from .sde import (PerturbationKernel, VpSchedule, beta, em_step, eps_to_score,
                  perturb, perturbation_kernel, vp_ancestral_step, vp_em_step)

__version__ = "0.1.0"
