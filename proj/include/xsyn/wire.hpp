// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "json.hpp"
#include "xsyn/backend.hpp"

// Wire protocol v1: JSON envelopes over HTTP POST /v1/rpc, tensors as
// base64-encoded XTEN. See docs/wire-protocol.md.
namespace xsyn::wire {

inline constexpr const char* kRpcPath = "/v1/rpc";

// Error codes carried in {"id", "error": {"code", "message"}}.
inline constexpr const char* kBadRequest = "BAD_REQUEST";
inline constexpr const char* kDimsMismatch = "DIMS_MISMATCH";
inline constexpr const char* kInternal = "INTERNAL";
inline constexpr const char* kUnsupported = "UNSUPPORTED";

// --- payload codecs. Decoders throw ParseError on malformed input. ---

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

nlohmann::json to_json(const backends::BackendManifest& m);
backends::BackendManifest manifest_from_json(const nlohmann::json& j);

nlohmann::json to_json(const backends::DenoiseRequest& r);
backends::DenoiseRequest denoise_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const backends::DenoiseResponse& r);
backends::DenoiseResponse denoise_response_from_json(const nlohmann::json& j);

nlohmann::json to_json(const backends::SegmentRequest& r);
backends::SegmentRequest segment_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SegmentationResult& r);
SegmentationResult segmentation_from_json(const nlohmann::json& j);

/// Request envelope with the id removed, compact. Two requests with the same
/// key are the same call.
std::string request_key(const nlohmann::json& envelope);

/// Moves one request body to a backend and returns the response body.
class Transport {
public:
    virtual ~Transport() = default;
    virtual std::string call(const std::string& request) = 0;
};

/// Server side: decodes an envelope, runs the op on the backends, encodes the
/// response or error envelope. Never throws.
class Dispatcher {
public:
    explicit Dispatcher(backends::BackendSet backends);
    std::string handle(const std::string& request);
    nlohmann::json handle(const nlohmann::json& envelope);

private:
    nlohmann::json run_op(const std::string& op, const nlohmann::json& payload);

    backends::BackendSet m_backends;
};

/// In-process transport straight into a dispatcher (no sockets).
class LocalTransport final : public Transport {
public:
    explicit LocalTransport(std::shared_ptr<Dispatcher> dispatcher) : m_dispatcher(std::move(dispatcher)) {}
    std::string call(const std::string& request) override { return m_dispatcher->handle(request); }

private:
    std::shared_ptr<Dispatcher> m_dispatcher;
};

struct HttpOptions {
    /// "http://host:port" or "host:port".
    std::string endpoint;
    int retries = 3;
    int backoff_ms = 100;
    int timeout_ms = 60000;
    int max_in_flight = 4;
};

/// POSTs to <endpoint>/v1/rpc. Retries connection failures and 5xx replies
/// with exponential backoff (every op is idempotent); bounds concurrent calls.
class HttpTransport final : public Transport {
public:
    explicit HttpTransport(HttpOptions options);
    ~HttpTransport() override;
    std::string call(const std::string& request) override;

private:
    struct Slots;
    HttpOptions m_options;
    std::unique_ptr<Slots> m_slots;
};

/// Appends {"request", "response"} lines to a JSONL transcript.
class RecordingTransport final : public Transport {
public:
    RecordingTransport(std::shared_ptr<Transport> inner, const std::filesystem::path& path);
    std::string call(const std::string& request) override;

private:
    std::shared_ptr<Transport> m_inner;
    std::mutex m_mutex;
    std::ofstream m_out;
};

/// Answers from a recorded transcript, matching on `request_key`; the reply
/// carries the caller's id. Unknown requests fail with a Transport error.
class ReplayTransport final : public Transport {
public:
    explicit ReplayTransport(const std::filesystem::path& path);
    std::string call(const std::string& request) override;
    std::size_t size() const { return m_responses.size(); }

private:
    std::map<std::string, nlohmann::json> m_responses;
};

/// Client implementing all three backend contracts over a transport. The
/// manifest is fetched once and its protocol version and schedule digest
/// checked; every response is validated before it is returned.
class RemoteBackend final : public backends::DenoiserBackend,
                            public backends::CodecBackend,
                            public backends::SegmenterBackend {
public:
    explicit RemoteBackend(std::shared_ptr<Transport> transport);

    backends::BackendManifest manifest() override;
    backends::DenoiseResponse denoise(const backends::DenoiseRequest& request) override;
    Tensor encode(const Tensor& image) override;
    Tensor decode(const Tensor& latent) override;
    SegmentationResult segment(const backends::SegmentRequest& request) override;

private:
    nlohmann::json rpc(const std::string& op, nlohmann::json payload);

    std::shared_ptr<Transport> m_transport;
    std::atomic<std::uint64_t> m_next_id{1};
    std::once_flag m_manifest_once;
    backends::BackendManifest m_manifest;
};

backends::BackendSet make_remote_backends(std::shared_ptr<Transport> transport);

/// HTTP server hosting a dispatcher on a background thread.
class RpcServer {
public:
    explicit RpcServer(std::shared_ptr<Dispatcher> dispatcher);
    ~RpcServer();
    RpcServer(const RpcServer&) = delete;
    RpcServer& operator=(const RpcServer&) = delete;

    /// Binds and starts serving; port 0 picks a free port. Returns the port.
    int start(const std::string& host, int port);
    /// Blocks until stop() is called from elsewhere.
    void wait();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> m_impl;
};

}  // namespace xsyn::wire
