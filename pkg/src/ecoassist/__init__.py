"""Safe RL driver assistance for a medium-duty truck.

A longitudinal truck model follows a lead vehicle; an exponential control
barrier function projects proposed wheel torques onto a collision-free set;
an MPO actor-critic learns torque and gear-shift actions.
"""

__version__ = "0.1.0"
