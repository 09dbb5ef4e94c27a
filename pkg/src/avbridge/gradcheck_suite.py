"""Finite-difference verification registry.

Every differentiable op, the composite blocks, each fusion mechanism and
the full fused-model loss are checked at float64 against central
differences. The CLI `gradcheck` command runs the whole registry and exits
nonzero if any worst-case relative error crosses the threshold.
"""

from __future__ import annotations

import numpy as np

from . import rng as R
from . import tensor as T
from .bridge import BridgeConfig, build_bridge_blocks
from .conditioning import TimestepPair
from .config import ExperimentConfig, OptimSection, TowerSection, BridgeSection, EvalSection
from .nn import AdaLN
from .objectives import joint_loss
from .synthdata import DataConfig
from .tensor import Tensor

THRESHOLD = 1e-4
STEP = 1e-5


def _rand(shape, seed, idx=0):
    return Tensor(R.stream(seed, "gradcheck", idx).standard_normal(shape))


def _worst(fns_and_inputs) -> float:
    return max(T.grad_check(fn, x, STEP) for fn, x in fns_and_inputs)


def _square_sum(y: Tensor) -> Tensor:
    return T.sum_all(T.mul(y, y))


def check_add(seed=0):
    cases = []
    for i, shape in enumerate([(4,), (3, 5), (2, 3, 4)]):
        b = _rand(shape, seed, 100 + i)
        cases.append((lambda x, b=b: _square_sum(T.add(x, b)), _rand(shape, seed, i)))
    bias = _rand((4,), seed, 200)
    cases.append((lambda x, bias=bias: _square_sum(T.add(x, bias)), _rand((3, 4), seed, 201)))
    x0 = _rand((3, 4), seed, 202)
    cases.append((lambda b, x0=x0: _square_sum(T.add(x0, b)), _rand((4,), seed, 203)))
    return _worst(cases)


def check_mul(seed=0):
    cases = []
    for i, shape in enumerate([(4,), (3, 5), (2, 3, 4)]):
        b = _rand(shape, seed, 300 + i)
        cases.append((lambda x, b=b: T.sum_all(T.mul(T.mul(x, b), x)), _rand(shape, seed, i)))
    return _worst(cases)


def check_silu(seed=0):
    return _worst([(lambda x: _square_sum(T.silu(x)), _rand(s, seed, i))
                   for i, s in enumerate([(6,), (3, 4), (2, 2, 3)])])


def check_matmul(seed=0):
    w1 = _rand((4, 3), seed, 400)
    w2 = _rand((5, 4), seed, 401)
    w3 = _rand((2, 3, 4), seed, 402)
    return _worst([
        (lambda x, w1=w1: _square_sum(T.matmul(x, w1)), _rand((5, 4), seed, 403)),
        (lambda x, w2=w2: _square_sum(T.matmul(w2, x)), _rand((4, 3), seed, 404)),
        (lambda x, w3=w3: _square_sum(T.matmul(w3, x)), _rand((4, 2), seed, 405)),
    ])


def check_softmax(seed=0):
    return _worst([(lambda x: _square_sum(T.softmax(x, axis=-1)), _rand(s, seed, i))
                   for i, s in enumerate([(5,), (3, 4), (2, 3, 4)])])


def check_layer_norm(seed=0):
    gamma = _rand((6,), seed, 500)
    beta = _rand((6,), seed, 501)
    return _worst([
        (lambda x: _square_sum(T.layer_norm(x)), _rand((4, 6), seed, 502)),
        (lambda x, g=gamma, b=beta: _square_sum(T.layer_norm(x, gamma=g, beta=b)),
         _rand((4, 6), seed, 503)),
        (lambda x: _square_sum(T.layer_norm(x)), _rand((2, 3, 6), seed, 504)),
    ])


def check_attention(seed=0):
    kv = _rand((2, 5, 4), seed, 600)
    mask = np.zeros((3, 5), dtype=bool)
    mask[:, :3] = True

    def with_mask(q, kv=kv, mask=mask):
        return _square_sum(T.scaled_dot_attention(q, kv, kv, mask=mask))

    return _worst([
        (lambda q, kv=kv: _square_sum(T.scaled_dot_attention(q, kv, kv)), _rand((2, 3, 4), seed, 601)),
        (lambda k, q0=_rand((2, 3, 4), seed, 602): _square_sum(
            T.scaled_dot_attention(q0, k, k)), _rand((2, 5, 4), seed, 603)),
        (with_mask, _rand((2, 3, 4), seed, 604)),
    ])


def check_shape_ops(seed=0):
    idx = np.array([0, 2, 2, 1])
    return _worst([
        (lambda x: _square_sum(T.reshape(T.swap_axes(x, 0, 1), (12,))), _rand((3, 4), seed, 700)),
        (lambda x: _square_sum(T.concat(T.split(x, [2, 3], axis=-2), axis=-2)), _rand((5, 4), seed, 701)),
        (lambda x, idx=idx: _square_sum(T.index_rows(x, idx)), _rand((3, 4), seed, 702)),
        (lambda x: _square_sum(T.tile_mid(x, 3)), _rand((2, 4), seed, 703)),
        (lambda x: _square_sum(T.take_rows(x, [1, 1, 0])), _rand((3, 4), seed, 704)),
    ])


def check_adaln(seed=0):
    unit = AdaLN(4, 4, dtype=np.float64)
    for p in unit.parameters():  # random projections so the gate is active
        p.data[...] = R.stream(seed, "gradcheck.adaln").standard_normal(p.shape) * 0.3
    cond = _rand((4,), seed, 800)

    def f_x(x, unit=unit, cond=cond):
        m, g = unit(x, cond)
        return T.sum_all(T.mul(m, T.tile_mid(g, m.shape[-2])))

    def f_cond(c, unit=unit):
        x = _rand((3, 4), seed, 801)
        m, g = unit(x, c)
        return T.sum_all(T.mul(m, T.tile_mid(g, m.shape[-2])))

    return _worst([(f_x, _rand((3, 4), seed, 802)), (f_cond, cond)])


def randomize_params(module, seed: int, std: float = 0.3):
    """Overwrite every parameter (including zero-initialized gates and
    adapters) so gradients flow through all paths during checks."""
    g = R.stream(seed, "gradcheck.randomize")
    for _, p in module.named_parameters():
        p.data[...] = (g.standard_normal(p.shape) * std).astype(p.data.dtype)


def _f64_block(mechanism, d=8, heads=2, seed=0):
    cfg = BridgeConfig(mechanism=mechanism, video_layers=(0,), audio_layers=(0,),
                       d_bridge=d, n_heads=heads)
    block = build_bridge_blocks(cfg, d_video=d, d_audio=d, seed=seed, dtype=np.float64)[0]
    randomize_params(block, seed)
    return block


def _check_fuse(mechanism, seed=0):
    block = _f64_block(mechanism, seed=seed)
    t_pair = TimestepPair(0.3)
    z_a = _rand((5, 8), seed, 900)
    z_v0 = _rand((4, 8), seed, 901)

    def f_v(z_v, block=block, z_a=z_a):
        u_v, u_a = block.fuse_latents(z_v, z_a, t_pair)
        return T.add(_square_sum(u_v), _square_sum(u_a))

    def f_a(z_a_in, block=block, z_v0=z_v0):
        u_v, u_a = block.fuse_latents(z_v0, z_a_in, t_pair)
        return T.add(_square_sum(u_v), _square_sum(u_a))

    return _worst([(f_v, z_v0), (f_a, z_a)])


def check_dca(seed=0):
    return _check_fuse("DCA", seed)


def check_full_attn(seed=0):
    return _check_fuse("FULL_ATTN", seed)


def check_additive(seed=0):
    return _check_fuse("ADDITIVE", seed)


def check_uni_v2a(seed=0):
    return _check_fuse("UNI_V2A", seed)


def check_uni_a2v(seed=0):
    return _check_fuse("UNI_A2V", seed)


def _tiny_config() -> ExperimentConfig:
    return ExperimentConfig(
        video=TowerSection(n_layers=2, d_model=16, n_heads=2, d_text=8, seq_len=6),
        audio=TowerSection(n_layers=2, d_model=12, n_heads=2, d_text=8, seq_len=8),
        bridge=BridgeSection(d_bridge=8, n_heads=2, video_layers=(0,), audio_layers=(0,)),
        data=DataConfig(seq_v=6, d_v=16, seq_a=8, d_a=12, pulse_width_v=0.5, pulse_width_a=0.8),
        optim=OptimSection(batch_size=2),
        eval=EvalSection(),
        seed=11,
    )


def check_fused_model_loss(seed=0):
    """Finite differences through the whole fused forward + joint loss,
    probing a bridge weight and a trainable tower bias."""
    from .train import build_model, make_batch

    cfg = _tiny_config()
    model = build_model(cfg, dtype=np.float64)
    randomize_params(model, seed, std=0.1)
    batch, t_a, eps_v, eps_a = make_batch(cfg, 0)
    batch.x_v = batch.x_v.astype(np.float64)
    batch.x_a = batch.x_a.astype(np.float64)
    eps_v = eps_v.astype(np.float64)
    eps_a = eps_a.astype(np.float64)

    def loss_with(holder, attr, probe):
        setattr(holder, attr, probe)
        total, _, _ = joint_loss(model, batch, t_a, eps_v, eps_a)
        return total

    bridge_lin = model.bridges[0].core.a2v.attn.wq
    tower_lin = model.video.blocks[1].mlp.fc2
    cases = [
        (lambda p, h=bridge_lin: loss_with(h, "bias", p), Tensor(bridge_lin.bias.data.copy())),
        (lambda p, h=bridge_lin: loss_with(h, "weight", p), Tensor(bridge_lin.weight.data.copy())),
        (lambda p, h=tower_lin: loss_with(h, "bias", p), Tensor(tower_lin.bias.data.copy())),
    ]
    return _worst(cases)


REGISTRY = {
    "add": check_add,
    "mul": check_mul,
    "silu": check_silu,
    "matmul": check_matmul,
    "softmax": check_softmax,
    "layer_norm": check_layer_norm,
    "scaled_dot_attention": check_attention,
    "shape_ops": check_shape_ops,
    "adaln_modulate": check_adaln,
    "dca_fuse": check_dca,
    "fullattn_fuse": check_full_attn,
    "additive_fuse": check_additive,
    "uni_fuse_v2a": check_uni_v2a,
    "uni_fuse_a2v": check_uni_a2v,
    "fused_model_loss": check_fused_model_loss,
}


def run_suite(seed: int = 0) -> dict[str, float]:
    """Worst relative error per registered op."""
    return {name: fn(seed) for name, fn in REGISTRY.items()}
