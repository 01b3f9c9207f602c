"""Norm-constrained convolutional network calculus and learning experiments.

Subpackages:

* cnn        -- conv-layer algebra, forward/backward, norms, rescaling
* compiler   -- exact compilation of shallow ReLU nets into constrained CNNs
* complexity -- covering-number recursion, entropy bounds, brute-force nets
* links      -- scalar link networks, risk functionals, scalar inequalities
* learnlab   -- synthetic targets, ERM training, convergence-rate experiments
* cli        -- config-driven command line front end
"""

__version__ = "0.1.0"
