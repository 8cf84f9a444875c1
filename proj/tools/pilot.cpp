// Pilot runs used to calibrate the acceptance thresholds. Writes a plain
// log; the committed copy lives in tests/acceptance/pilot_log.txt.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "tvae/experiments.hpp"

using namespace tvae;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  const std::string out = argc > 1 ? argv[1] : "pilot_out";
  const std::string which = argc > 2 ? argv[2] : "all";
  std::ofstream log(out + "/pilot_log.txt", std::ios::app);
  auto emit = [&](const std::string& line) {
    std::cout << line << std::endl;
    log << line << std::endl;
  };
  ExperimentOptions opt;
  opt.out_dir = out;

  if (which == "all" || which == "historyless") {
    emit("# historyless: repeat_pattern sentence corpus, kl weight 0, 3000 steps");
    for (std::size_t len : {10, 30, 50}) {
      for (Variant v : {Variant::kConvDeconv, Variant::kLstmVae}) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = run_training(historyless_config(v, len, 0), out + "/historyless");
        char buf[256];
        std::snprintf(buf, sizeof buf, "L=%zu %s params=%zu final_bpc=%.4f bpc@1000=%.4f time=%.0fs", len,
                      variant_name(v).c_str(), res.param_count, res.rows.back().bpc, res.rows[9].bpc,
                      seconds_since(t0));
        emit(buf);
      }
    }
  }
  if (which == "all" || which == "collapse") {
    emit("# collapse: two_topic lines, hybrid_bytenet N=5, kl annealed over 1000 steps, 3000 steps");
    for (std::uint64_t seed : {0, 1, 2}) {
      for (double alpha : {0.0, 0.2}) {
        const auto t0 = std::chrono::steady_clock::now();
        const TrainConfig cfg = two_topic_config(Variant::kHybridBytenet, alpha, 5, seed);
        Trainer tr(cfg);
        MetricRow last;
        tr.run(cfg.max_steps, [&](const MetricRow& r) { last = r; });
        const double probe = latent_topic_probe(tr.model(), tr.corpus().vocab, cfg.data, 2000, 1000 + seed);
        char buf[256];
        std::snprintf(buf, sizeof buf, "seed=%llu alpha=%.1f kl_nats_per_char=%.5f rec_bpc=%.4f probe=%.3f time=%.0fs",
                      static_cast<unsigned long long>(seed), alpha, kl_nats_per_char(last), last.bpc, probe,
                      seconds_since(t0));
        emit(buf);
      }
    }
  }
  if (which == "all" || which == "tradeoff") {
    emit("# tradeoff: two_topic lines, hybrid_lstm, kl annealed over 1000 steps, 3000 steps");
    for (double alpha : {0.0, 0.1, 0.2, 0.5}) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto res = run_training(two_topic_config(Variant::kHybridLstm, alpha, 3, 0), out + "/tradeoff");
      const auto& r = res.rows.back();
      char buf[256];
      std::snprintf(buf, sizeof buf, "alpha=%.1f kl_nats_per_char=%.5f rec_bpc=%.4f bound_bpc=%.4f time=%.0fs", alpha,
                    kl_nats_per_char(r), r.bpc, r.bpc + r.kl_bpc, seconds_since(t0));
      emit(buf);
    }
  }
  return 0;
}
