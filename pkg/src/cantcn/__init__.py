"""CAN bus intrusion detection through per-ID signal reconstruction.

Pipeline: parse traffic logs (candump text or SynCAN-style CSV), reverse
engineer signal boundaries from payload bit statistics, optionally inject
labeled message-modification attacks, train a dilated causal convolutional
reconstructor per message ID, calibrate per-signal error thresholds on
validation data, and flag any message whose reconstruction error exceeds a
threshold on at least one signal.
"""

__version__ = "0.1.0"

from . import attackgen, canlog, detector, evalkit, neuralnet, sigmap  # noqa: F401,E402
from .canlog import CanFrame, CanLog, SignalRecord  # noqa: F401
from .detector import ThresholdSet, TrainConfig, Verdicts  # noqa: F401
from .neuralnet import TcnModel  # noqa: F401
from .sigmap import Normalizer, SignalLayout, SignalSpec  # noqa: F401
