#include "windlass/fabric.hpp"

#include "engine.hpp"

namespace windlass {

const char* to_string(errc c) noexcept {
  switch (c) {
    case errc::zero_length: return "zero_length";
    case errc::out_of_bounds: return "out_of_bounds";
    case errc::misaligned: return "misaligned";
    case errc::stale_descriptor: return "stale_descriptor";
    case errc::foreign_handle: return "foreign_handle";
    case errc::registration_budget: return "registration_budget";
    case errc::duplicate_key: return "duplicate_key";
    case errc::invalid_argument: return "invalid_argument";
    case errc::retry_limit_exceeded: return "retry_limit_exceeded";
    case errc::overlapping_region: return "overlapping_region";
    case errc::detach_unknown_region: return "detach_unknown_region";
    case errc::address_not_attached: return "address_not_attached";
    case errc::group_spans_nodes: return "group_spans_nodes";
    case errc::size_mismatch: return "size_mismatch";
    case errc::epoch_conflict: return "epoch_conflict";
    case errc::epoch_violation: return "epoch_violation";
    case errc::epoch_still_open: return "epoch_still_open";
    case errc::no_passive_epoch: return "no_passive_epoch";
    case errc::matching_list_overflow: return "matching_list_overflow";
    case errc::already_locked: return "already_locked";
    case errc::not_locked: return "not_locked";
    case errc::protocol_error: return "protocol_error";
    case errc::type_mismatch: return "type_mismatch";
    case errc::unsupported_type: return "unsupported_type";
    case errc::heap_exhausted: return "heap_exhausted";
    case errc::corrupt_chain: return "corrupt_chain";
    case errc::slot_overflow: return "slot_overflow";
    case errc::degenerate_fit: return "degenerate_fit";
    case errc::mode_mismatch: return "mode_mismatch";
    case errc::deadlock: return "deadlock";
  }
  return "unknown";
}

Error::Error(errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what),
      code_(code) {}

void raise(errc code, const std::string& what) { throw Error(code, what); }

// ---------------------------------------------------------------------------
// Rank facade
// ---------------------------------------------------------------------------

RankId Rank::world_size() const { return engine_->config().p; }

NodeId Rank::node() const { return id_ / engine_->config().ranks_per_node; }

NodeId Rank::node_of(RankId r) const {
  return r / engine_->config().ranks_per_node;
}

VAddr Rank::alloc(std::uint64_t bytes) { return engine_->alloc(id_, bytes); }

bool Rank::try_reserve(VAddr base, std::uint64_t bytes) {
  return engine_->try_reserve(id_, base, bytes);
}

void Rank::release(VAddr base) { engine_->release(id_, base); }

std::span<std::byte> Rank::local_span(VAddr base, std::uint64_t len) {
  return engine_->local_span(id_, base, len);
}

RemoteDescriptor Rank::register_region(std::uint64_t bytes) {
  return engine_->register_fresh(id_, bytes);
}

RemoteDescriptor Rank::register_at(VAddr base, std::uint64_t bytes) {
  return engine_->register_at(id_, base, bytes, 0);
}

RemoteDescriptor Rank::register_with_key(std::uint64_t bytes,
                                         RegionKey agreed_key) {
  VAddr base = engine_->alloc(id_, bytes);
  return engine_->register_at(id_, base, bytes, agreed_key);
}

RemoteDescriptor Rank::register_at_with_key(VAddr base, std::uint64_t bytes,
                                            RegionKey agreed_key) {
  return engine_->register_at(id_, base, bytes, agreed_key);
}

std::span<std::byte> Rank::map_region(const RemoteDescriptor& d) {
  return engine_->map_region(id_, d);
}

void Rank::deregister(const RemoteDescriptor& d) {
  engine_->deregister(id_, d);
}

std::uint64_t Rank::live_registrations() const {
  return engine_->live_registrations(id_);
}

bool Rank::descriptor_live(const RemoteDescriptor& d) {
  return engine_->descriptor_live(id_, d);
}

std::span<std::byte> Rank::local_view(const RemoteDescriptor& d) {
  return engine_->local_view(id_, d);
}

RemoteDescriptor Rank::shared_descriptor(RankId owner, RegionKey agreed_key,
                                         std::uint64_t bytes) const {
  return RemoteDescriptor{owner, agreed_key | detail::kAgreedKeyBit, bytes,
                          owner / engine_->config().ranks_per_node};
}

OpHandle Rank::put(const RemoteDescriptor& d, std::uint64_t offset,
                   std::span<const std::byte> src) {
  return engine_->issue_transfer(id_, OpClass::Put, d, offset, src, {});
}

OpHandle Rank::get(const RemoteDescriptor& d, std::uint64_t offset,
                   std::span<std::byte> dst) {
  return engine_->issue_transfer(id_, OpClass::Get, d, offset, {}, dst);
}

OpHandle Rank::put_u64(const RemoteDescriptor& d, std::uint64_t offset,
                       std::uint64_t value) {
  auto* p = reinterpret_cast<const std::byte*>(&value);
  return engine_->issue_transfer(id_, OpClass::Put, d, offset, {p, 8}, {});
}

std::int64_t Rank::fadd64(const RemoteDescriptor& d, std::uint64_t offset,
                          std::int64_t operand) {
  return engine_->fadd64(id_, d, offset, operand);
}

std::uint64_t Rank::cas64(const RemoteDescriptor& d, std::uint64_t offset,
                          std::uint64_t compare, std::uint64_t swap) {
  return engine_->cas64(id_, d, offset, compare, swap);
}

void Rank::wait(OpHandle h) { engine_->wait(id_, h); }

bool Rank::test(OpHandle h) { return engine_->test(id_, h); }

void Rank::gsync() { engine_->gsync(id_, std::nullopt); }

void Rank::gsync_to(RankId target) { engine_->gsync(id_, target); }

bool Rank::complete(const OpHandle& h) const {
  return engine_->op_complete(id_, h);
}

std::uint64_t Rank::load_local_u64(const RemoteDescriptor& d,
                                   std::uint64_t offset) {
  return engine_->load_local_u64(id_, d, offset);
}

void Rank::store_local_u64(const RemoteDescriptor& d, std::uint64_t offset,
                           std::uint64_t value) {
  engine_->store_local_u64(id_, d, offset, value);
}

void Rank::yield() { engine_->yield(id_); }

void Rank::poll(const std::function<bool()>& probe) {
  engine_->poll(id_, probe);
}

double Rank::now() const { return engine_->now(id_); }

std::mt19937_64& Rank::rng() { return engine_->body_rng(id_); }

std::uint64_t Rank::context_nonce(std::uint64_t salt) {
  return engine_->ctx_nonce(id_, salt);
}

void Registration::reset() {
  if (rank_) rank_->deregister(desc_);
  rank_ = nullptr;
}

// ---------------------------------------------------------------------------
// Fabric
// ---------------------------------------------------------------------------

Fabric::Fabric(FabricConfig cfg)
    : engine_(std::make_unique<detail::Engine>(cfg, nullptr)) {
  ranks_.reserve(cfg.p);
  for (RankId r = 0; r < cfg.p; ++r) ranks_.push_back(Rank(this, engine_.get(), r));
}

Fabric::Fabric(FabricConfig cfg, std::unique_ptr<detail::Strategy> strategy)
    : engine_(std::make_unique<detail::Engine>(cfg, std::move(strategy))) {
  ranks_.reserve(cfg.p);
  for (RankId r = 0; r < cfg.p; ++r) ranks_.push_back(Rank(this, engine_.get(), r));
}

Fabric::~Fabric() = default;

const FabricConfig& Fabric::config() const { return engine_->config(); }

void Fabric::run(const std::function<void(Rank&)>& body) {
  engine_->run(*this, ranks_, body);
}

bool Fabric::run_path(const std::function<void(Rank&)>& body) {
  return engine_->run(*this, ranks_, body) ==
         detail::Engine::RunStatus::Completed;
}

OpCounters Fabric::counters() const { return engine_->counters_snapshot(); }

double Fabric::clock(RankId r) const { return engine_->now(r); }

std::uint64_t Fabric::registration_count(RankId r) const {
  return engine_->live_registrations(r);
}

const std::vector<CompletionRecord>& Fabric::completion_log() const {
  return engine_->completion_log();
}

void Fabric::set_lock_observer(std::function<void(const LockEvent&)> fn) {
  lock_observer_ = std::move(fn);
}

const std::function<void(const LockEvent&)>& Fabric::lock_observer() const {
  return lock_observer_;
}

}  // namespace windlass
