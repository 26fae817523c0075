"""Shared fixtures: shrunken configurations that run each experiment in seconds."""
import pytest

SMALL = {
    "validate-posterior": ["sampler.n_steps=20000", "sampler.replicas=8", "sampler.thin=100",
                           "sampler.online_n_steps=20000", "sampler.online_replicas=8"],
    "rbm-generalization": ["sampler.n_steps=2000", "sampler.eval_every=500",
                           "sampler.replicas=1", "sampler.end_evals=1"],
    "wta-fixed-point": ["task.presentations=400", "task.chunk_s=50"],
    "survival-stats": ["task.duration_s=100", "task.chunk_s=50", "task.b_values_per_s=1e-2,1e-3"],
    "wta-adapt": ["task.presentations=20,40,20", "task.eval_every_s=5", "task.probes_per_type=5",
                  "task.images_per_class=5"],
    "wta-lesion": ["task.stage_s=10,10,10", "task.eval_every_s=5", "task.probes_per_class=4",
                   "task.tuning_probes_per_class=4", "task.circuits_per_population=2",
                   "task.utterances_per_class=3", "task.images_per_class=5",
                   "task.tracked_neuron=30"],
}


@pytest.fixture
def small():
    return SMALL
