#pragma once

#include <stdexcept>
#include <string>

namespace windlass {

enum class errc {
  zero_length,
  out_of_bounds,
  misaligned,
  stale_descriptor,
  foreign_handle,
  registration_budget,
  duplicate_key,
  invalid_argument,
  retry_limit_exceeded,
  overlapping_region,
  detach_unknown_region,
  address_not_attached,
  group_spans_nodes,
  size_mismatch,
  epoch_conflict,
  epoch_violation,
  epoch_still_open,
  no_passive_epoch,
  matching_list_overflow,
  already_locked,
  not_locked,
  protocol_error,
  type_mismatch,
  unsupported_type,
  heap_exhausted,
  corrupt_chain,
  slot_overflow,
  degenerate_fit,
  mode_mismatch,
  deadlock,
};

const char* to_string(errc c) noexcept;

/// Library error carrying a machine-checkable code plus a human message.
class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what);
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] void raise(errc code, const std::string& what);

}  // namespace windlass
