"""
vranlab - learning-based vRAN functional split and resource orchestration

A discrete-time simulator of one virtualized base station, a DQN split
orchestrator, a regression-based resource orchestrator and the STAO/DYNO
reference policies, with an experiment harness around them.
"""

__version__ = "1.0.0"
