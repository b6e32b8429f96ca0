"""Time the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made from
``SDFN_DISABLE_NUMBA`` at import time. Numba compile time is excluded by a
warm-up call.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys
import time

CASES = ("im2col", "col2im", "label4", "resize", "densenet_step", "unet_step")


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def child(repeat):
    import numpy as np

    from sdfn import kernels
    from sdfn.data_synth import PhantomSpec, make_record
    from sdfn.networks import MiniDenseNet, MiniDenseNetConfig, MiniUNet, MiniUNetConfig
    from sdfn.tensor_core import AdamState, adam_step, bce_loss, pixelwise_ce

    rng = np.random.default_rng(0)
    xp = rng.random((16, 32, 34, 34))
    cols = kernels.im2col(xp, 3, 3, 1, 32, 32)
    mask = make_record(PhantomSpec(extent=512, patients=1), 0, 0).lung_mask
    mask = mask | (rng.random(mask.shape) < 0.02)
    img = rng.random((1024, 1024))

    dn = MiniDenseNet(MiniDenseNetConfig(), seed=0)
    xd = rng.random((16, 1, 64, 64))
    yd = (rng.random((16, 14)) < 0.3).astype(float)
    un = MiniUNet(MiniUNetConfig(), seed=0)
    xu = rng.random((8, 1, 64, 64))
    yu = (rng.random((8, 1, 64, 64)) < 0.5).astype(float)

    def step(model, loss):
        params = [p for _, p in model.parameters()]
        state = AdamState()

        def run():
            for p in params:
                p.zero_grad()
            loss().backward()
            adam_step(params, [p.grad for p in params], state)
        return run

    fns = {
        "im2col": lambda: kernels.im2col(xp, 3, 3, 1, 32, 32),
        "col2im": lambda: kernels.col2im(cols, xp.shape, 3, 3, 1, 32, 32),
        "label4": lambda: kernels.label4(mask),
        "resize": lambda: kernels.resize_bilinear(img, 256, 256),
        "densenet_step": step(dn, lambda: bce_loss(yd, dn.forward(xd, training=True)[3])),
        "unet_step": step(un, lambda: pixelwise_ce(yu, un.forward(xu, training=True))),
    }
    out = {"backend": kernels.backend()}
    out.update({k: _best(f, repeat) for k, f in fns.items()})
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        child(args.repeat)
        return
    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, SDFN_DISABLE_NUMBA=flag)
        proc = subprocess.run([sys.executable, __file__, "--child", "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        results[res["backend"]] = res
    nb, np_ = results["numba"], results["numpy"]
    print(f"{'case':15s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for case in CASES:
        print(f"{case:15s} {1e3 * nb[case]:10.2f} {1e3 * np_[case]:10.2f} {np_[case] / nb[case]:8.2f}")


if __name__ == "__main__":
    main()
