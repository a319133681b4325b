"""padwerk: build, simulate, evolve, and evaluate circuit padding machines."""

__version__ = "0.1.0"

from .trace import (  # noqa: F401
    CellEvent,
    FoldPlan,
    Label,
    Trace,
    apply_zero_mask,
    derive_relay_trace,
    extract_direction_cells,
    make_folds,
    parse_trace,
    serialize_trace,
)
from .machine import (  # noqa: F401
    DistSpec,
    InterspaceTemplate,
    MachinePair,
    MachineSpec,
    PaddingBudget,
    StateSpec,
    build_spring,
    export_framework_source,
    instantiate_interspace,
    parse_machine_spec,
    sample_distribution,
    serialize_machine_spec,
)
from .simulate import (  # noqa: F401
    DefendedTrace,
    OverheadReport,
    check_budget,
    overhead,
    simulate,
    simulate_dataset,
)
from .classify import (  # noqa: F401
    PRPoint,
    ScoreMatrix,
    cross_classify,
    featurize,
    knn_scores,
    max_recall,
    pr_sweep,
    run_external_oracle,
)
from .evolve import (  # noqa: F401
    EvolutionConfig,
    Individual,
    crossover,
    mutate,
    next_generation,
    random_machine,
    select_parent,
)
