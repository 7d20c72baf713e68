import numpy as np

from nrelaggs.model import feature_names
from nrelaggs.relaggs import relaggs_feature_names


def recreation_columns(model, state):
    """Indices into the RELAGGS matrix matching each identity-model pre-predictor column, by feature name."""
    table_names = {t: state.feature_names(t) for t in model.plan.table_order}
    static = {name: i for i, name in enumerate(relaggs_feature_names(model.plan, table_names))}
    return np.array([static[name] for name in feature_names(model, table_names)])
