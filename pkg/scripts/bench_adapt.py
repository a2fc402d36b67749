"""Time the adaptation pipeline stage by stage at a given resolution."""

import argparse
import time

from panoshift import ldi as L
from panoshift.config import Config
from panoshift.metrics import measure_run
from panoshift.render import layer_ldi, render
from panoshift.scene import default_scene, raycast


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--dy", type=float, default=0.25)
    p.add_argument("--workers", type=int, nargs="+", default=[1, 4])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    color, depth = raycast(default_scene(), 2 * args.height, args.height)

    t0 = time.perf_counter()
    edges = L.group_edges(L.detect_discontinuities(depth), depth)
    print(f"edge detection: {time.perf_counter() - t0:.3f}s, {len(edges)} edges")

    for workers in args.workers:
        config = Config(workers=workers)
        best_layer = best_render = float("inf")
        for _ in range(args.repeat):
            (ldi, stats), cost = measure_run(layer_ldi, color, depth, None, config)
            best_layer = min(best_layer, cost.wall_time_s)
            t0 = time.perf_counter()
            render(ldi, args.dy, workers=workers)
            best_render = min(best_render, time.perf_counter() - t0)
        print(f"workers={workers}: layering {best_layer:.3f}s, render {best_render:.3f}s, "
              f"pool {stats['pool_size']}, traced peak {cost.peak_mem_mb:.0f} MB, rss {cost.peak_rss_mb:.0f} MB")


if __name__ == "__main__":
    main()
