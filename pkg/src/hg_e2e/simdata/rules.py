"""Traffic-rule monitor shared by data generation and closed-loop evaluation."""
from __future__ import annotations

from dataclasses import dataclass

from .world import World

COLLISION = "collision"
RED_LIGHT = "red_light"
STOP_SIGN = "stop_sign"
OFF_ROUTE = "off_route"
INFRACTIONS = (COLLISION, RED_LIGHT, STOP_SIGN, OFF_ROUTE)


@dataclass(frozen=True)
class Infraction:
    kind: str
    t: float
    detail: str = ""


class RuleMonitor:
    """Call :meth:`update` once after every world step.

    * collision: ego box overlaps an agent box; the agent is removed so one
      contact counts once.
    * red light: the ego centre crosses a stop line while that light is red.
    * stop sign: the ego centre crosses a stop line without having been
      below ``stop_speed`` within ``stop_zone`` metres before it.
    * off route: lateral offset from the route above ``off_route`` metres.
    """

    def __init__(self, world: World, off_route: float = 3.0, stop_zone: float = 8.0, stop_speed: float = 0.5):
        self.off_route = off_route
        self.stop_zone = stop_zone
        self.stop_speed = stop_speed
        self.prev_s = world.s
        self.stopped_at: set[int] = set()

    def update(self, world: World) -> list[Infraction]:
        events = []
        for agent in world.collisions():
            events.append(Infraction(COLLISION, world.t, f"agent {agent.ident} ({agent.kind})"))
            world.remove_agent(agent)
        prev, s = self.prev_s, world.s
        for k, (light, state) in enumerate(zip(world.scenario.lights, world.light_states())):
            if prev < light.s_line <= s and state == "red":
                events.append(Infraction(RED_LIGHT, world.t, f"light {k}"))
        for k, stop in enumerate(world.scenario.stops):
            if stop.s_line - self.stop_zone <= s <= stop.s_line and world.speed < self.stop_speed:
                self.stopped_at.add(k)
            if prev < stop.s_line <= s and k not in self.stopped_at:
                events.append(Infraction(STOP_SIGN, world.t, f"stop {k}"))
        if abs(world.lateral) > self.off_route:
            events.append(Infraction(OFF_ROUTE, world.t, f"lateral {world.lateral:.2f} m"))
        self.prev_s = s
        return events
