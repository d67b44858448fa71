"""tessfuse: distributed fusion estimation for proper tessarine signals.

Layers:

* :mod:`tessfuse.algebra`    -- tessarine scalar/matrix arithmetic.
* :mod:`tessfuse.models`     -- factorizable second-order signal models.
* :mod:`tessfuse.sensing`    -- fading sensors, noise, equivalent models.
* :mod:`tessfuse.estimator`  -- local filter / predictor / smoother engine.
* :mod:`tessfuse.fusion`     -- cross-sensor recursions and fused estimates.
* :mod:`tessfuse.simkit`     -- scenarios, Monte Carlo, timing harness.
* :mod:`tessfuse.cli`        -- experiment command line.
"""

__version__ = "0.1.0"
