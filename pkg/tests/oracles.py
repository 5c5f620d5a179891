"""Independent reference computations used by the tests."""

import numpy as np
import torch


def central_difference(fn, tensor, index, h=1e-6):
    """d fn / d tensor[index] by central differences, perturbing in place."""
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + h
        plus = fn().item()
        tensor[index] = orig - h
        minus = fn().item()
        tensor[index] = orig
    return (plus - minus) / (2 * h)


def gradient_errors(fn, tensors, max_entries=48, seed=0, floor=1e-3):
    """Relative error between autograd and central differences for each tensor.

    ``fn`` maps nothing to a scalar built from ``tensors`` (float64, requires
    grad). For large tensors a seeded subset of entries is checked. Returns
    {name: ||analytic - numeric|| / max(||analytic||, ||numeric||, floor * g)}
    where g is the largest per-tensor gradient norm; the floor keeps gradients
    that are identically zero (e.g. key biases under softmax) from turning
    rounding noise into a relative error.
    """
    rng = np.random.default_rng(seed)
    for t in tensors.values():
        t.grad = None
    fn().backward()
    pairs = {}
    for name, t in tensors.items():
        flat = np.arange(t.numel())
        if flat.size > max_entries:
            flat = rng.choice(flat, size=max_entries, replace=False)
        analytic, numeric = [], []
        for f in flat:
            index = np.unravel_index(f, tuple(t.shape))
            analytic.append(t.grad[index].item())
            numeric.append(central_difference(fn, t.data, index))
        pairs[name] = (np.array(analytic), np.array(numeric))
    scale = max(max(np.linalg.norm(a), np.linalg.norm(n)) for a, n in pairs.values())
    return {
        name: float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor * scale, 1e-12))
        for name, (a, n) in pairs.items()
    }


def module_gradient_errors(module, loss_fn, inputs=(), **kw):
    """Gradient errors for every parameter of ``module`` plus any input tensors."""
    module.double().eval()
    tensors = {name: p for name, p in module.named_parameters()}
    for i, x in enumerate(inputs):
        tensors[f"input{i}"] = x
    return gradient_errors(loss_fn, tensors, **kw)


def htk_mel_centers(n_mels, sample_rate, low=0.0):
    """Mel filter center frequencies computed from the HTK formula directly."""
    top = 2595.0 * np.log10(1.0 + (sample_rate / 2) / 700.0)
    bottom = 2595.0 * np.log10(1.0 + low / 700.0)
    pts = np.linspace(bottom, top, n_mels + 2)
    return 700.0 * (10.0 ** (pts / 2595.0) - 1.0)[1:-1]


def fft_peak_hz(x, sample_rate):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return np.fft.rfftfreq(len(x), 1.0 / sample_rate)[np.argmax(spec)]


def conformer_block_param_count(d, ff, kernel, n_heads):
    """Hand-summed parameter shapes of one Conformer block."""
    ln = 2 * d
    ff_module = ln + (d * ff * d + ff * d) + (ff * d * d + d)
    attn = ln + 4 * (d * d + d) + d * d + 2 * n_heads * (d // n_heads)
    conv = ln + (d * 2 * d + 2 * d) + (d * kernel + d) + ln + (d * d + d)
    return 2 * ff_module + attn + conv + ln


def subsampling_param_count(d, channels, input_dim, n_convs=2):
    total, in_ch, freq = 0, 1, input_dim
    for _ in range(n_convs):
        total += in_ch * channels * 9 + channels
        in_ch, freq = channels, (freq - 1) // 2 + 1
    return total + in_ch * freq * d + d
