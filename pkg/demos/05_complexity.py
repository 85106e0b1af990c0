# # Operation counts
#
# The closed-form per-layer counts for forward and backward propagation
# are evaluated term for term, squared length terms included. The
# instrumented counts come from multiply-accumulates tallied inside the
# kernels during one real pass. The two disagree by roughly a factor of the
# kernel length, which is why both are shown.

from pcgcnn import NetworkConfig
from pcgcnn.complexity import count_operations, format_report

report = count_operations(NetworkConfig(), instrument=True)
print(format_report(report))

# %%

first = report.layers[0]
print("layer 1 forward multiplications (closed form): %d" % first.fp_mul)
print("layer 1 forward multiply-accumulates (measured): %d" % report.instrumented["fp"][0][0])
print("ratio: %.1f" % (first.fp_mul / report.instrumented["fp"][0][0]))
