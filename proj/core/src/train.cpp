#include "sfmim/train.hpp"

#include <cstdio>
#include <cstdlib>

namespace sfmim {

size_t worker_threads() {
  const char* env = std::getenv("SFMIM_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1)
    throw ConfigError(std::string("SFMIM_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<size_t>(v);
}

TrainLogger::TrainLogger(const std::string& path) {
  if (path.empty()) return;
  out_ = std::make_shared<std::ofstream>(path, std::ios::binary | std::ios::trunc);
  if (!*out_) throw DataError("cannot write training log " + path);
  *out_ << "epoch,split,loss,oa,aa,kappa\n";
  out_->flush();
}

void TrainLogger::row(size_t epoch, const std::string& split, double loss,
                      const MetricsReport* metrics) {
  if (!out_) return;
  char buf[160];
  if (metrics) {
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.9g,%.6f,%.6f,%.6f\n", epoch, split.c_str(), loss,
                  metrics->oa, metrics->aa, metrics->kappa);
  } else {
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.9g,,,\n", epoch, split.c_str(), loss);
  }
  *out_ << buf;
  out_->flush();
}

}  // namespace sfmim
