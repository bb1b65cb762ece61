"""Tabular action-robust reinforcement learning under probabilistic policy-execution uncertainty."""
from arrl.mdp import (TabularMDP, ExecutionModel, Trajectory, ExactEvaluation, AffineMap, make_rng,
                      validate_mdp, normalize_rewards, sample_step, sample_executed_action,
                      evaluate_policy_pair_exact, apply_D_operator, apply_V_operator)
from arrl.planner import (RobustSolution, RobustPolicyValue, InstanceTooLarge, solve_robust_optimal,
                          evaluate_robust_policy, brute_force_minimax, verify_perfect_duality)
from arrl.runlog import LearnerConfig, Certificate, PolicySchedule, RunLog
from arrl.arrlc import ARRLC, arrlc_run, compute_bonus_theta
from arrl.ucbh import ARUCBH, ucbh_run, learning_rate, hoeffding_bonus, alpha_weights
from arrl.envs import build_cliff_walking, build_fixed_adversary_cliff, build_random_mdp, build_chain_mdp, make_env
from arrl.evaluation import (PerturbationSpec, EvaluationReport, RegretRecord, RegretCurve,
                             rollout_perturbed, compute_regret_curve, sandwich_audit)

__version__ = "0.1.0"
