"""Federated learning engine: local training, aggregation, misbehaviour and the round loop."""
from .behaviors import DATA_TAGS, RESULT_TAGS, TAGS, ClientOutcome, MaliciousBehavior, apply_malicious_behavior
from .engine import (CONTEXT_KEYS, ClientReport, OrchestratorOutput, RoundTrace, SimState, behavior_clusters,
                     init_state, orchestrator_round, probe_assignments, requested_areas_for, run_scenario,
                     should_dismiss_round)
from .model import (LocalData, ModelParams, ModelShape, TrainHyper, accuracy, aggregate_fedavg, encode,
                    feature_dim, fit_local, init_params, local_train, loss_and_grad, predict_proba,
                    prepare_local_data, split_indices)
