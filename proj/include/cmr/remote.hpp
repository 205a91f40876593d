#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "cmr/generation.hpp"
#include "json.hpp"

namespace cmr {

// Bidirectional newline-delimited byte stream to the inference sidecar.
class LineChannel {
 public:
  virtual ~LineChannel() = default;
  // Throws TransportError.
  virtual void write_line(std::string_view line) = 0;
  // std::nullopt at end of stream. Throws TransportError.
  virtual std::optional<std::string> read_line() = 0;
  // Unblocks a concurrent read_line, which then returns std::nullopt.
  virtual void shutdown() = 0;
};

// Addresses:
//   tcp:HOST:PORT
//   unix:PATH
//   exec:COMMAND   (spawned via /bin/sh; speaks the protocol on stdin/stdout)
std::unique_ptr<LineChannel> connect_channel(std::string_view address);

// Wire format helpers, exposed for tests and tooling.
nlohmann::json make_request(std::string_view id, const SerializedInstance& instance, const GenerationParams& params);
// Throws MalformedResponseError if required fields are missing or mistyped,
// RemoteError for an {"id", "error"} line.
ModelOutput parse_response(const nlohmann::json& response, const GenerationParams& params);

struct RemoteOptions {
  std::size_t max_in_flight = 8;
  std::chrono::milliseconds timeout{120000};
};

// Client for the sidecar wire protocol. Requests are multiplexed over one
// channel and matched to responses by id, so responses may arrive in any
// order. A broken channel fails every pending request with TransportError and
// is reconnected on the next call.
class RemoteGenerator final : public Generator {
 public:
  using Connector = std::function<std::unique_ptr<LineChannel>()>;

  explicit RemoteGenerator(std::string address, RemoteOptions opts = {});
  RemoteGenerator(Connector connect, RemoteOptions opts);
  ~RemoteGenerator() override;

  RemoteGenerator(const RemoteGenerator&) = delete;
  RemoteGenerator& operator=(const RemoteGenerator&) = delete;

  ModelOutput generate(const SerializedInstance& instance, const GenerationParams& params) override;
  std::size_t max_in_flight() const override { return opts_.max_in_flight; }

  // Lines that could not be routed to any request (bad JSON, unknown id).
  std::size_t unrouted_lines() const;

 private:
  struct Session;
  struct Slots;

  std::shared_ptr<Session> session();

  Connector connect_;
  RemoteOptions opts_;
  std::unique_ptr<Slots> slots_;
  mutable std::mutex mu_;
  std::shared_ptr<Session> session_;
  std::size_t next_id_ = 0;
};

}  // namespace cmr
