// Attack one synthetic pair with the bundled toy ensemble and report how far
// the held-out encoder's view of the adversarial image moved toward the target.

#include <cstdio>

#include "foa/foa.hpp"

int main() {
  const auto all = foa::synth::default_ensemble(1);
  const std::vector<foa::EncoderSpec> surrogates(all.begin(), all.begin() + 2);
  const foa::EncoderSpec heldout = foa::synth::heldout_encoder(1);

  const foa::Image nat = foa::synth::sample_image(32, 32, 1000);
  const foa::Image tar = foa::synth::sample_image(32, 32, 1001);

  foa::AttackConfig cfg;
  cfg.seed = 7;
  const foa::AttackResult res = foa::run_progressive(nat, tar, surrogates, cfg,
      [](const foa::StepRecord& rec, const foa::Image&, const foa::Image&) {
        if (rec.step % 50 == 0)
          std::printf("step %3zu  total %.4f  linf %.4f\n", rec.step, rec.weighted_total, rec.delta_linf);
      });

  std::printf("stages %zu  clusters %zu  mean final surrogate loss %.4f\n", res.stages_run,
              res.clusters_used, res.mean_final_total());
  std::printf("held-out cosine to target: clean %.4f  adversarial %.4f\n",
              foa::global_cosine(heldout, nat, tar), foa::global_cosine(heldout, res.adv_image, tar));
}
