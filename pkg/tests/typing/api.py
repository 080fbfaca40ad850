import rezone


config = rezone.SimConfig(geometry=rezone.profiles.CHEAPEST)
sim = rezone.Simulator(config, rezone.adversary.two_zones())

sim.run()
sim.run(["c0", "c1"])
sim.clone().step("c0")

if sim.finished is True:
    ...

program = rezone.attack_program(rezone.AttackId.A1_MAPPING, sim)
outcome = rezone.run_attack(sim, program)
if outcome.blocked:
    ...

report = rezone.explore(lambda: rezone.sync_simulator(2), 10, budget=1000)
for v in report.verdicts():
    v.property.value.lower()

b = rezone.account(sim.trace, rezone.CostWeights.units())
b.total + 1.0

spec = rezone.load_scenario("sync-1.yaml").with_overrides(depth=5)
rezone.run(spec).ok
