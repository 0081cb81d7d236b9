// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <cstring>

#include "dmoerm/kernels.hpp"

namespace dmoerm::kernels {

const Ops* avx2_ops_impl();  // defined in kernels_avx2.cpp

const Ops* avx2_ops() { return avx2_ops_impl(); }

namespace {

struct Selection {
  const Ops* ops;
  Backend backend;
};

Selection select() {
  const Ops* avx2 = avx2_ops();
  const char* force = std::getenv("DMOERM_KERNELS");
  if (force != nullptr) {
    if (std::strcmp(force, "scalar") == 0) return {&scalar_ops(), Backend::kScalar};
    if (std::strcmp(force, "avx2") == 0 && avx2 != nullptr)
      return {avx2, Backend::kAvx2};
    return {&scalar_ops(), Backend::kScalar};
  }
  if (avx2 != nullptr) return {avx2, Backend::kAvx2};
  return {&scalar_ops(), Backend::kScalar};
}

const Selection& selection() {
  static const Selection s = select();
  return s;
}

}  // namespace

const Ops& active() { return *selection().ops; }

Backend active_backend() { return selection().backend; }

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::kScalar: return "scalar";
    case Backend::kAvx2: return "avx2";
  }
  return "unknown";
}

}  // namespace dmoerm::kernels
