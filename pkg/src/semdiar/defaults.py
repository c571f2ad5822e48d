"""Single table of tunable defaults.

Precedence at the command line: explicit flag > ``--params`` file > this table.

======================  =========  =============================================
key                     default    meaning
======================  =========  =============================================
alpha1                  0.5        weight of the cluster-spread term (acoustic)
alpha2                  0.5        weight of the embedding-spread term (semantic)
beta1                   0.7        weight of the semantic turn probability
beta2                   0.3        weight of the acoustic turn probability
theta                   0.5        dialogue fusion threshold (strict ``>``)
turn_threshold          0.5        fused turn probability cutoff (strict ``>``)
tau_split               0.4        cosine distance for opening a new speaker
tau_merge               0.3        merge cost threshold
min_segment_s           0.3        shorter segments are left out of clustering
max_shift_s             1.0        boundary correction search radius
split_level             span       ``span`` or ``segment`` iteration for split
p_percentile            0.8        row percentile for affinity refinement
k_max                   10         eigen-gap search cap
kmeans_restarts         50         k-means restarts (best inertia kept)
kmeans_max_iter         300        Lloyd iterations per restart
kmeans_tol              1e-6       relative inertia change for convergence
acoustic_window_s       2.0        search radius for external turn probabilities
seed                    0          RNG seed
======================  =========  =============================================
"""

DEFAULTS: dict = {
    "alpha1": 0.5,
    "alpha2": 0.5,
    "beta1": 0.7,
    "beta2": 0.3,
    "theta": 0.5,
    "turn_threshold": 0.5,
    "tau_split": 0.4,
    "tau_merge": 0.3,
    "min_segment_s": 0.3,
    "max_shift_s": 1.0,
    "split_level": "span",
    "p_percentile": 0.8,
    "k_max": 10,
    "kmeans_restarts": 50,
    "kmeans_max_iter": 300,
    "kmeans_tol": 1e-6,
    "acoustic_window_s": 2.0,
    "seed": 0,
}
