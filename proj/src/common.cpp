#include "sizerec/common.hpp"

#include <cstdarg>
#include <cstdio>
#include <ctime>

namespace sizerec {

const char* err_name(Err e) {
  switch (e) {
    case Err::UnknownSize: return "UnknownSize";
    case Err::EmptyDataset: return "EmptyDataset";
    case Err::TooFewInstances: return "TooFewInstances";
    case Err::InvalidConfig: return "InvalidConfig";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::AllMasked: return "AllMasked";
    case Err::AllKeysMasked: return "AllKeysMasked";
    case Err::InvalidLabel: return "InvalidLabel";
    case Err::IndexOutOfRange: return "IndexOutOfRange";
    case Err::EmptySequence: return "EmptySequence";
    case Err::NotAScalar: return "NotAScalar";
    case Err::NoGradients: return "NoGradients";
    case Err::EmptyTrainingSet: return "EmptyTrainingSet";
    case Err::EmptyHistory: return "EmptyHistory";
    case Err::DivergedLoss: return "DivergedLoss";
    case Err::EmptyEvaluationSet: return "EmptyEvaluationSet";
    case Err::InsufficientAblationUsers: return "InsufficientAblationUsers";
    case Err::EmptyPopulation: return "EmptyPopulation";
    case Err::ModelLoadError: return "ModelLoadError";
    case Err::BundleCorrupt: return "BundleCorrupt";
    case Err::IOError: return "IOError";
    case Err::BindError: return "BindError";
    case Err::BadRequest: return "BadRequest";
    case Err::UnknownScale: return "UnknownScale";
  }
  return "Unknown";
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double now_ms() {
  timespec ts;
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return ts.tv_sec * 1e3 + ts.tv_nsec * 1e-6;
}

namespace logging {

namespace {
Level g_level = Level::Info;

void vwrite(Level lvl, const char* tag, const char* fmt, va_list ap) {
  if (g_level > lvl) return;
  std::fprintf(stderr, "[%s] ", tag);
  std::vfprintf(stderr, fmt, ap);
  std::fputc('\n', stderr);
}
}  // namespace

void set_level(Level lvl) { g_level = lvl; }

bool set_level(const std::string& name) {
  if (name == "debug") g_level = Level::Debug;
  else if (name == "info") g_level = Level::Info;
  else if (name == "warn") g_level = Level::Warn;
  else if (name == "error") g_level = Level::Error;
  else if (name == "off") g_level = Level::Off;
  else return false;
  return true;
}

Level level() { return g_level; }

#define SIZEREC_LOG_IMPL(fn, lvl, tag)        \
  void fn(const char* fmt, ...) {             \
    va_list ap;                               \
    va_start(ap, fmt);                        \
    vwrite(lvl, tag, fmt, ap);                \
    va_end(ap);                               \
  }

SIZEREC_LOG_IMPL(debug, Level::Debug, "debug")
SIZEREC_LOG_IMPL(info, Level::Info, "info")
SIZEREC_LOG_IMPL(warn, Level::Warn, "warn")
SIZEREC_LOG_IMPL(error, Level::Error, "error")

#undef SIZEREC_LOG_IMPL

}  // namespace logging
}  // namespace sizerec
