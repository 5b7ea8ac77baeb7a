"""Single-shot low-light image deblurring toolkit.

Submodules
----------
models     generator and conditional discriminator networks
losses     training objective terms and feature extractors
blursynth  motion-trajectory blur kernel synthesis
images     float image loading/saving helpers
data       patch extraction, pair alignment, training stream
training   adversarial trainer, ablation variants, checkpoints
metrics    PSNR / SSIM / CIEDE2000 and benchmark evaluation
cli        command-line interface
"""

__version__ = "0.1.0"
