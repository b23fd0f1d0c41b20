#: Magic bytes and header layout of the token blob format (NRTN v1): magic, rows (uint32 LE), dim (uint32 LE).
TOKEN_FILE_MAGIC = b'NRTN'
TOKEN_FILE_HEADER = '<4sII'
TOKEN_FILE_DTYPE = '<f4'
#: Largest rows * dim a blob may declare.
TOKEN_FILE_MAX_VALUES = 2 ** 32 - 1
#: Unit norm tolerance of normalized token rows.
NORM_TOLERANCE = 1e-6
#: Tolerance on marginal sums.
MARGINAL_SUM_TOLERANCE = 1e-9

#: Log-sum-exp smoothness of the fine-grained similarity.
ALPHA = 1.0
SIMILARITY_MODES = ('fine_grained', 'mean_pool', 'max_pool')

#: Entropic regularization of the sequence-level transport and of the batch realignment.
EPSILON_VIDEO = 0.1
EPSILON_CLIP = 1.0
SINKHORN_ITERS = 50
SINKHORN_TOL = 1e-9
#: Over-relaxation of the log domain iteration: plain iterations before the weight is first estimated, and the
#: number of iterations over which its contraction is measured before the weight is revised.
MOMENTUM_FROM = 5
MOMENTUM_WINDOW = 10
#: Epsilon scaling: each warm start stage divides epsilon by two and stops at a loose tolerance.
EPSILON_SCALING_DECAY = 0.5
SCALING_STAGE_ITERS = 100
SCALING_STAGE_TOL = 1e-6

#: Prompt value is the bottom quantile of the originally aligned pair similarities.
PROMPT_QUANTILE = 0.3
MARGINAL_SCHEMES = ('matched_mass', 'uniform')
PROMPT_SCOPES = ('dataset', 'batch')

TAU = 0.07
BETA = 0.3
LAMBDA = 0.1

MEASURES = ('capavg', 'dtw', 'otam', 'ot_norton')
CAPAVG_SCOPES = ('global', 'per_candidate')
RECALL_KS = (1, 5, 10)

#: Sliding window protocol for frame-level alignment recall (seconds).
WINDOW_S = 32
STEP_S = 8
FPS = 1.0

ORACLE_MAX_N = 7
ORACLE_MAX_N_LIMIT = 8
ORACLE_MAX_PATH_CELLS = 12
FD_STEP = 1e-5
REFERENCE_TOL = 1e-12
REFERENCE_ITERS = 100000

#: Environment variable capping worker threads.
THREADS_ENV = 'NORTON_THREADS'
CSV_FORMAT = '%.9g'
