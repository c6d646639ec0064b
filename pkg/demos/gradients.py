"""Check every layer's backward pass against central finite differences.

Run: python3 demos/gradients.py
"""

from gatedpool import gradcheck
from gatedpool.model import GatingSettings, ModelConfig, PoolingSettings

print(gradcheck.format_table(gradcheck.run_all()))

# The full-model check works for any configuration; this one uses early fusion,
# Fisher-vector pooling and GLU gating.
variant = ModelConfig(fusion="early_concat", pooling=PoolingSettings("netfv"),
                      gating=GatingSettings("glu", "cg"))
print("\nearly fusion + NetFV + GLU:", gradcheck.model_check(variant).max_error)
