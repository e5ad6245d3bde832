"""Gradient attribution for the brain-alignment and next-word-prediction tasks."""

from .brain import (
    ExtendedContext,
    aggregate_word_scores,
    attribute_brain_tr,
    brain_loss_function,
    extended_context,
    predict_tr,
    prediction_graph,
)
from .methods import IG_RULES, METHODS, AttributionResult, attribute, evaluate, gxi, ig
from .nwp import NWPProblem, attribute_nwp, nwp_loss, nwp_loss_function, nwp_problem
from .records import (
    TASKS,
    AttributionRecord,
    AttributionTarget,
    make_record,
    read_records,
    write_records,
)
from .runner import AttributionSettings, BrainFit, attribution_keys, run_attributions
