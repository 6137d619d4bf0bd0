// Trains ACE and epsilon-greedy TB on a small grid world and prints the
// exact TV distance to the target at each checkpoint.

#include <cstdio>

#include "acegfn/envs/grid.hpp"
#include "acegfn/trainer.hpp"

int main() {
  using namespace acegfn;
  const envs::GridWorldEnv env(8, 2);
  for (Method m : {Method::kAce, Method::kTb}) {
    TrainConfig cfg = default_config("grid", m);
    cfg.env.grid_side = 8;
    cfg.iterations = 1000;
    cfg.eval_every = 200;
    Trainer<envs::GridWorldEnv> trainer(env, cfg);
    trainer.run([&](const MetricRecord& r) {
      std::printf("%-3s iter %5ld  trajectories %6ld  tv %.4f  log Z %.4f\n", to_string(m), r.iteration,
                  r.trajectories_consumed, r.tv.value_or(-1.0), r.log_z);
    });
    std::printf("%-3s exact log Z %.4f\n", to_string(m), trainer.exact_reference()->log_z);
  }
}
