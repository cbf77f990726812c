"""Every ViT-to-TrV ablation row on a tiny model: size, one forward pass and a gradient check."""
import numpy as np

from trvmim.arch import ForwardContext, ablation_configs, count_params, init_params, preset
from trvmim.mim import mim_forward
from trvmim.mim.verify import objective_gradcheck, random_mask
from trvmim.numerics import Tensor

base = preset("toy", width=8, grid_h=4, grid_w=4, teacher_dim=8)
print(f"{'row':<20}{'norm':>8}{'ffn':>8}{'pos':>8}{'init':>15}{'params':>8}{'out std':>9}{'grad err':>10}{'sec':>6}")
for name, cfg in ablation_configs(base).items():
    params = {k: Tensor(v) for k, v in init_params(cfg, 0).items()}
    rng = np.random.default_rng(0)
    patches = rng.standard_normal((2, cfg.num_patches, cfg.patch_dim))
    out = mim_forward(cfg, params, patches, [random_mask(cfg, rng) for _ in range(2)],
                      ForwardContext.for_config(cfg)).data
    report = objective_gradcheck(cfg, h=1e-3, order=4)
    print(f"{name:<20}{cfg.norm_scheme:>8}{cfg.ffn_type:>8}{cfg.pos_embed:>8}{cfg.init_scheme:>15}"
          f"{count_params(cfg):>8}{out.std():>9.3f}{report.max_rel_error:>10.1e}{report.seconds:>6.1f}")
