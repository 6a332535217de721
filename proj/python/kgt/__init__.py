"""Key-graph attention and a small windowed-transformer denoiser."""

from ._kgt import (
    ConfigError,
    DimensionError,
    InputError,
    IntegrityError,
    IoError,
    KGTNet,
    KgtError,
    LoadError,
    NumericError,
    add_noise,
    attention_flops,
    attention_peak_bytes,
    build_graph,
    counters,
    dense_attention,
    gradcheck,
    keygraph_attention,
    psnr,
    read_pgm,
    reset_counters,
    select_topk,
    similarity,
    synth_patch,
    write_pgm,
)

__all__ = [name for name in dir() if not name.startswith("_")]
