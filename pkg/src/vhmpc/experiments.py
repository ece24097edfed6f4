"""Scenario builders and multi-episode runs shared by the CLI and the tests."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .simulator import GENERATORS, Impulse, Scenario, SimConfig, SimTrace, landing_stats, run_episode

DEFAULT_PUSH = (0.6, 0.0, 10.0, 0.0)  # t [s], J [N s]
COMPARE_RANGES = (1.5, 1.5, 0.75)  # uniform push half-ranges [N s]
EPISODE_STEPS = 50


def push_scenario(t: float, J, n_steps: int = 15, generator: str = "mpc", seed: int = 0) -> Scenario:
    return Scenario(name="push", n_steps=n_steps, impulses=[Impulse(float(t), np.asarray(J, float))],
                    generator=generator, seed=seed)


def random_pushes(rng: np.random.Generator, n_windows: int, window: float, ranges=COMPARE_RANGES) -> list[Impulse]:
    """One impulse per ``window`` seconds at a uniformly random phase."""
    half = np.asarray(ranges, dtype=float)
    out = []
    for k in range(n_windows):
        t = (k + rng.uniform(0.0, 1.0)) * window
        out.append(Impulse(float(t), rng.uniform(-half, half)))
    return out


def compare_episode(index: int, seed: int = 0, n_steps: int = EPISODE_STEPS, ranges=COMPARE_RANGES,
                    template: Scenario | None = None, window: float | None = None) -> Scenario:
    """Episode ``index`` of a compare run: its own seed and push sequence.

    The scenario depends only on ``(seed, index)``, so both generators see
    identical disturbances in every episode they run.
    """
    template = template or Scenario(name="compare")
    window = template.gait_params().T_nom if window is None else window
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    rng = np.random.default_rng(ss)
    pushes = random_pushes(rng, n_steps, window, ranges)
    return replace(template, name=f"{template.name}-{index:03d}", n_steps=n_steps, impulses=pushes,
                   seed=int(ss.generate_state(1)[0]), generator="mpc")


@dataclass
class CompareResult:
    traces: dict[str, list[SimTrace]] = field(default_factory=dict)

    def stats(self) -> dict:
        return landing_stats([t for g in GENERATORS for t in self.traces.get(g, [])])

    def summary(self) -> dict:
        out = {"stats": self.stats(), "episodes": {}}
        for g in GENERATORS:
            trs = self.traces.get(g, [])
            out["episodes"][g] = [
                {"scenario": t.scenario, "seed": t.seed, "steps_completed": len(t.steps), "fell": t.fell,
                 "fall_step": t.fall_step}
                for t in trs
            ]
            out.setdefault("falls", {})[g] = int(sum(t.fell for t in trs))
            out.setdefault("steps_completed", {})[g] = int(sum(len(t.steps) for t in trs))
        return out


def run_series(generator: str, n_steps: int, cfg: SimConfig, seed: int = 0, ranges=COMPARE_RANGES,
               template: Scenario | None = None, episode_steps: int = EPISODE_STEPS,
               record_ticks: bool = False, max_episodes: int | None = None) -> list[SimTrace]:
    """Episodes of one generator until ``n_steps`` steps are completed.

    An episode ends after ``episode_steps`` steps or at a fall; the next
    episode then starts from the nominal initial state.
    """
    cap = max_episodes if max_episodes is not None else 10 * max(n_steps, 1)
    done, i, traces = 0, 0, []
    while done < n_steps and i < cap:
        sc = compare_episode(i, seed, min(episode_steps, n_steps - done), ranges, template)
        tr = run_episode(replace(sc, generator=generator), cfg, record_ticks=record_ticks)
        traces.append(tr)
        done += len(tr.steps)
        i += 1
    return traces


def run_compare(n_steps: int, cfg: SimConfig, seed: int = 0, ranges=COMPARE_RANGES,
                template: Scenario | None = None, episode_steps: int = EPISODE_STEPS,
                record_ticks: bool = False, max_episodes: int | None = None, workers: int = 1) -> CompareResult:
    """Run both generators on the same episode sequence until each completes ``n_steps`` steps.

    With ``workers > 1`` the generator series run in separate processes; the
    result does not depend on the worker count.
    """
    args = (n_steps, cfg, seed, ranges, template, episode_steps, record_ticks, max_episodes)
    res = CompareResult()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(GENERATORS))) as pool:
            futures = {g: pool.submit(run_series, g, *args) for g in GENERATORS}
            res.traces = {g: futures[g].result() for g in GENERATORS}
    else:
        res.traces = {g: run_series(g, *args) for g in GENERATORS}
    return res


def disturbed_step(trace: SimTrace, t: float, tol: float = 1e-9):
    """The first step whose controller saw the impulse applied at time ``t`` (or None).

    Within one instant disturbances are applied before the control cycle, so
    the first cycle at or after ``t`` is the first reaction to the push. A push
    that coincides with a switch therefore belongs to the step that can still
    respond to it.
    """
    for c in trace.cycles:
        if c[0] >= t - tol:
            k = c[1]
            return trace.steps[k] if k < len(trace.steps) else None
    return None
