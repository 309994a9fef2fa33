"""Pretrain on machine data, finetune with eye and intention guidance, then drive the toy benchmark.

Takes about four minutes on one core.
"""
from hg_e2e.evaluate import ExpertDriver, ModelPolicy, RandomPolicy, benchmark_scenarios, run_benchmark, summarize
from hg_e2e.trainer import ablation

p = ablation.get_preset("toy")
seed = 0
art = ablation.prepare_seed(p, seed)
print(f"pretrained on machine data: last epoch loss {art.pretrain_log[-1]['total']:.3f}")

model = ablation.finetune_variant(art, p, seed, "both")
scenarios = benchmark_scenarios(p.routes, p.data.world)
for name, policy in [("model", ModelPolicy(model, p.data.history, p.data.density_side)),
                     ("random", RandomPolicy(seed)), ("expert", ExpertDriver())]:
    logs = run_benchmark(policy, scenarios)
    m = summarize(logs)
    print(f"{name:7s} DS {m['DS']:6.2f}  RC {m['RC']:6.2f}  IS {m['IS']:.3f}  "
          + " ".join(f"{g.route_id}:{g.status}" for g in logs))
