"""
Policy Evaluation - randomized rollouts, any-step success and Wilson intervals
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.stats import binomtest
from tqdm import tqdm

from src.config import RunConfig, settings
from src.modules.finetuning import BandEnv, SacAgent
from src.modules.networks import to_env_action

logger = logging.getLogger(__name__)

TRIAL_COLUMNS = ["trial", "success", "steps", "final_cd", "best_cd", "return"]
SUMMARY_COLUMNS = ["policy", "preset", "n_trials", "successes", "rate", "ci_low", "ci_high"]


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    """Wilson score interval for a binomial rate; (nan, nan) without trials"""
    if trials == 0:
        return float("nan"), float("nan")
    ci = binomtest(successes, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class PolicyReport:
    trials: pd.DataFrame
    summary: Dict

    @property
    def rate(self) -> float:
        return self.summary["rate"]


def rollout(env: BandEnv, agent: Optional[SacAgent], rng: np.random.Generator,
            limit: int) -> Dict:
    """
    One evaluation episode

    A learned agent acts in mean mode; without an agent actions are uniform
    in [-1, 1]^7. Success counts when any step meets the threshold.
    """
    observation = env.reset()
    success, total, best = False, 0.0, float("inf")
    result = None
    for _ in range(limit):
        if agent is None:
            action = to_env_action(rng.uniform(-1.0, 1.0, settings.ACTION_DIM))
        else:
            action = agent.act(observation.proprio, observation.cloud, mode="mean").action
        result = env.step(action)
        total += result.reward
        best = min(best, result.cd)
        success = success or result.success
        observation = result.observation
        if result.done:
            break
    return {"success": int(success), "steps": env.t, "final_cd": result.cd, "best_cd": best,
            "return": total}


def eval_policy(config: RunConfig, agent: Optional[SacAgent], n_trials: int) -> PolicyReport:
    """
    Success rate of a policy on the configured preset

    Args:
        config: Run configuration (task preset, thresholds, seed)
        agent: Trained agent, None for the uniform random baseline
        n_trials: Number of randomized episodes; 0 gives an empty report

    Returns:
        PolicyReport with per-trial rows and a summary carrying the 95% Wilson interval
    """
    limit = min(config.task.max_steps, settings.EPISODE_MAX_STEPS)
    task = dataclasses.replace(config.task, max_steps=limit)
    policy = "random" if agent is None else "learned"
    rows: List[Dict] = []
    if n_trials > 0:
        env = BandEnv(task, config.sac, config.data, seed=config.seed)
        rng = np.random.default_rng([config.seed, 1])
        for trial in tqdm(range(n_trials), desc=f"eval-policy ({policy})", unit="trial"):
            row = {"trial": trial}
            row.update(rollout(env, agent, rng, limit))
            rows.append(row)
            logger.debug(f"Trial {trial}: success={row['success']} steps={row['steps']}")

    successes = int(sum(r["success"] for r in rows))
    low, high = wilson_interval(successes, n_trials)
    summary = {"policy": policy, "preset": task.preset, "n_trials": n_trials,
               "successes": successes, "rate": successes / n_trials if n_trials else float("nan"),
               "ci_low": low, "ci_high": high}
    logger.info(f"Policy evaluation ({policy}, {task.preset}): {successes}/{n_trials} "
                f"successes, 95% CI [{low:.3f}, {high:.3f}]")
    return PolicyReport(pd.DataFrame(rows, columns=TRIAL_COLUMNS), summary)
