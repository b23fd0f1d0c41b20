from temporalot.core import *
from temporalot.similarity import *
from temporalot.sinkhorn import *
from temporalot.bucket import *
from temporalot.losses import *
from temporalot.tempalign import *
from temporalot.evaluation import *
from temporalot.oracle import *
from temporalot.synthetic import *
