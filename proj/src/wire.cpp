// SPDX-License-Identifier: Apache-2.0

#include "xsyn/wire.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>

#include "httplib.h"
#include "xsyn/digest.hpp"
#include "xsyn/errors.hpp"
#include "xsyn/xten.hpp"

namespace xsyn::wire {

using nlohmann::json;
using namespace xsyn::backends;

namespace {

template <typename T>
T field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key))
        throw ParseError(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("field '") + key + "': " + e.what());
    }
}

json box_to_json(const Box& b) {
    return json::array({b.x1, b.y1, b.x2, b.y2});
}

Box box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4)
        throw ParseError("box must be an array of four numbers");
    Box b;
    double* out[4] = {&b.x1, &b.y1, &b.x2, &b.y2};
    for (int i = 0; i < 4; ++i) {
        if (!j[i].is_number())
            throw ParseError("box must be an array of four numbers");
        *out[i] = j[i].get<double>();
        if (!std::isfinite(*out[i]))
            throw ParseError("box coordinates must be finite");
    }
    return b;
}

std::string branch_name(Branch b) {
    return b == Branch::Conditional ? "cond" : "uncond";
}

Branch branch_from_name(const std::string& s) {
    if (s == "cond")
        return Branch::Conditional;
    if (s == "uncond")
        return Branch::Unconditional;
    throw ParseError("unknown branch '" + s + "'");
}

json error_envelope(const json& id, const std::string& code, const std::string& message) {
    return {{"id", id}, {"error", {{"code", code}, {"message", message}}}};
}

}  // namespace

json tensor_to_json(const Tensor& t) {
    return {{"xten_b64", base64_encode(xten::encode(t))}};
}

Tensor tensor_from_json(const json& j) {
    const auto text = field<std::string>(j, "xten_b64");
    return xten::decode(base64_decode(text));
}

json to_json(const BackendManifest& m) {
    return {{"backend_id", m.backend_id},
            {"protocol_version", m.protocol_version},
            {"downscale", m.downscale},
            {"latent_channels", m.latent_channels},
            {"timesteps", m.timesteps},
            {"alphas_cumprod", m.alphas_cumprod},
            {"schedule_digest", m.schedule_digest},
            {"capabilities",
             {{"attention", m.capabilities.attention}, {"prompt_segmentation", m.capabilities.prompt_segmentation}}}};
}

BackendManifest manifest_from_json(const json& j) {
    BackendManifest m;
    m.backend_id = field<std::string>(j, "backend_id");
    m.protocol_version = field<int>(j, "protocol_version");
    m.downscale = field<int>(j, "downscale");
    m.latent_channels = field<int>(j, "latent_channels");
    m.timesteps = field<int>(j, "timesteps");
    m.alphas_cumprod = field<std::vector<double>>(j, "alphas_cumprod");
    m.schedule_digest = field<std::string>(j, "schedule_digest");
    const auto caps = field<json>(j, "capabilities");
    m.capabilities.attention = field<bool>(caps, "attention");
    m.capabilities.prompt_segmentation = field<bool>(caps, "prompt_segmentation");
    return m;
}

json to_json(const DenoiseRequest& r) {
    json entities = json::array();
    for (const auto& e : r.entities)
        entities.push_back({{"text", e.text}, {"box", box_to_json(e.box)}});
    return {{"latent", tensor_to_json(r.latent)},
            {"timestep", r.timestep},
            {"prompt", r.prompt},
            {"entities", entities},
            {"branch", branch_name(r.branch)}};
}

DenoiseRequest denoise_request_from_json(const json& j) {
    DenoiseRequest r;
    r.latent = tensor_from_json(field<json>(j, "latent"));
    r.timestep = field<int>(j, "timestep");
    r.prompt = field<std::string>(j, "prompt");
    for (const auto& e : field<json>(j, "entities"))
        r.entities.push_back({field<std::string>(e, "text"), box_from_json(field<json>(e, "box"))});
    r.branch = branch_from_name(field<std::string>(j, "branch"));
    return r;
}

json to_json(const DenoiseResponse& r) {
    json maps = json::array();
    for (const auto& m : r.attention)
        maps.push_back(tensor_to_json(m));
    return {{"noise", tensor_to_json(r.noise)}, {"attention", maps}};
}

DenoiseResponse denoise_response_from_json(const json& j) {
    DenoiseResponse r;
    r.noise = tensor_from_json(field<json>(j, "noise"));
    for (const auto& m : field<json>(j, "attention"))
        r.attention.push_back(tensor_from_json(m));
    return r;
}

json to_json(const SegmentRequest& r) {
    json points = json::array();
    for (const auto& p : r.points)
        points.push_back({{"x", p.x}, {"y", p.y}, {"label", p.polarity == Polarity::Foreground ? "fg" : "bg"}});
    return {{"image", tensor_to_json(r.image)},
            {"mode", r.mode == SegmentMode::Auto ? "auto" : "prompt"},
            {"image_id", r.image_id},
            {"box", r.box ? box_to_json(*r.box) : json(nullptr)},
            {"points", points}};
}

SegmentRequest segment_request_from_json(const json& j) {
    SegmentRequest r;
    r.image = tensor_from_json(field<json>(j, "image"));
    const auto mode = field<std::string>(j, "mode");
    if (mode == "auto")
        r.mode = SegmentMode::Auto;
    else if (mode == "prompt")
        r.mode = SegmentMode::Prompt;
    else
        throw ParseError("unknown segment mode '" + mode + "'");
    r.image_id = field<std::string>(j, "image_id");
    const auto box = field<json>(j, "box");
    if (!box.is_null())
        r.box = box_from_json(box);
    for (const auto& p : field<json>(j, "points")) {
        const auto label = field<std::string>(p, "label");
        if (label != "fg" && label != "bg")
            throw ParseError("point label must be fg or bg, got '" + label + "'");
        r.points.push_back({field<int>(p, "x"), field<int>(p, "y"),
                            label == "fg" ? Polarity::Foreground : Polarity::Background});
    }
    return r;
}

json to_json(const SegmentationResult& r) {
    json masks = json::array();
    for (const auto& m : r.masks)
        masks.push_back({{"mask", tensor_to_json(m.mask)}, {"area", m.area}, {"bbox", box_to_json(m.bbox)}});
    return {{"masks", masks}};
}

SegmentationResult segmentation_from_json(const json& j) {
    SegmentationResult r;
    for (const auto& m : field<json>(j, "masks")) {
        SegmentMask s;
        s.mask = tensor_from_json(field<json>(m, "mask"));
        s.area = field<std::int64_t>(m, "area");
        s.bbox = box_from_json(field<json>(m, "bbox"));
        if (s.area != mask_area(s.mask))
            throw ParseError("mask area " + std::to_string(s.area) + " does not match its pixels");
        r.masks.push_back(std::move(s));
    }
    return r;
}

std::string request_key(const json& envelope) {
    json copy = envelope;
    copy.erase("id");
    return copy.dump();
}

// --- server side ---

Dispatcher::Dispatcher(BackendSet backends) : m_backends(std::move(backends)) {
    if (!m_backends.denoiser || !m_backends.codec || !m_backends.segmenter)
        throw ConfigError("dispatcher needs a denoiser, a codec and a segmenter");
}

std::string Dispatcher::handle(const std::string& request) {
    json envelope;
    try {
        envelope = json::parse(request);
    } catch (const json::exception& e) {
        return error_envelope(nullptr, kBadRequest, std::string("invalid JSON: ") + e.what()).dump();
    }
    return handle(envelope).dump();
}

json Dispatcher::handle(const json& envelope) {
    const json id = envelope.is_object() && envelope.contains("id") ? envelope["id"] : json(nullptr);
    try {
        if (!envelope.is_object() || !envelope.contains("op") || !envelope["op"].is_string())
            return error_envelope(id, kBadRequest, "envelope needs string fields 'id' and 'op'");
        if (!id.is_string() && !id.is_number_integer())
            return error_envelope(id, kBadRequest, "envelope id must be a string or integer");
        const auto op = envelope["op"].get<std::string>();
        const json payload = envelope.contains("payload") ? envelope["payload"] : json::object();
        return {{"id", id}, {"op", op}, {"payload", run_op(op, payload)}};
    } catch (const ParseError& e) {
        return error_envelope(id, kBadRequest, e.what());
    } catch (const DimensionError& e) {
        return error_envelope(id, kDimsMismatch, e.what());
    } catch (const BackendError& e) {
        return error_envelope(id, e.code(), e.what());
    } catch (const std::exception& e) {
        return error_envelope(id, kInternal, e.what());
    }
}

json Dispatcher::run_op(const std::string& op, const json& payload) {
    if (op == "manifest")
        return to_json(m_backends.denoiser->manifest());
    if (op == "denoise")
        return to_json(m_backends.denoiser->denoise(denoise_request_from_json(payload)));
    if (op == "encode")
        return {{"latent", tensor_to_json(m_backends.codec->encode(tensor_from_json(field<json>(payload, "image"))))}};
    if (op == "decode")
        return {{"image", tensor_to_json(m_backends.codec->decode(tensor_from_json(field<json>(payload, "latent"))))}};
    if (op == "segment")
        return to_json(m_backends.segmenter->segment(segment_request_from_json(payload)));
    throw BackendError(BackendError::Kind::Remote, kUnsupported, "unknown op '" + op + "'");
}

// --- transports ---

struct HttpTransport::Slots {
    explicit Slots(int n) : free(n) {}
    std::mutex mutex;
    std::condition_variable cv;
    int free;
};

HttpTransport::HttpTransport(HttpOptions options)
    : m_options(std::move(options)), m_slots(std::make_unique<Slots>(std::max(1, m_options.max_in_flight))) {
    if (m_options.endpoint.empty())
        throw ConfigError("remote backend needs an endpoint");
    if (m_options.endpoint.find("://") == std::string::npos)
        m_options.endpoint = "http://" + m_options.endpoint;
}

HttpTransport::~HttpTransport() = default;

std::string HttpTransport::call(const std::string& request) {
    {
        std::unique_lock lock(m_slots->mutex);
        m_slots->cv.wait(lock, [&] { return m_slots->free > 0; });
        --m_slots->free;
    }
    struct Release {
        Slots& s;
        ~Release() {
            {
                std::lock_guard lock(s.mutex);
                ++s.free;
            }
            s.cv.notify_one();
        }
    } release{*m_slots};

    // A fresh client per call keeps concurrent callers independent.
    httplib::Client client(m_options.endpoint);
    if (!client.is_valid())
        throw BackendError(BackendError::Kind::Transport, "BAD_ENDPOINT", "cannot use endpoint " + m_options.endpoint);
    const auto timeout = std::chrono::milliseconds(m_options.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    std::string last_error;
    for (int attempt = 0; attempt <= m_options.retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(m_options.backoff_ms) * (1 << (attempt - 1)));
        auto res = client.Post(kRpcPath, request, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw BackendError(BackendError::Kind::Transport, "HTTP_" + std::to_string(res->status),
                               "unexpected HTTP status from " + m_options.endpoint);
        return res->body;
    }
    throw BackendError(BackendError::Kind::Transport, "UNREACHABLE",
                       m_options.endpoint + " failed after " + std::to_string(m_options.retries + 1) +
                           " attempts: " + last_error);
}

RecordingTransport::RecordingTransport(std::shared_ptr<Transport> inner, const std::filesystem::path& path)
    : m_inner(std::move(inner)), m_out(path, std::ios::binary | std::ios::app) {
    if (!m_out)
        throw Error("cannot open transcript " + path.string());
}

std::string RecordingTransport::call(const std::string& request) {
    auto response = m_inner->call(request);
    json line;
    try {
        line = {{"request", json::parse(request)}, {"response", json::parse(response)}};
    } catch (const json::exception& e) {
        throw BackendError(BackendError::Kind::Protocol, "BAD_RESPONSE", std::string("not JSON: ") + e.what());
    }
    std::lock_guard lock(m_mutex);
    m_out << line.dump() << "\n";
    m_out.flush();
    return response;
}

ReplayTransport::ReplayTransport(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open transcript " + path.string());
    std::string text;
    int lineno = 0;
    while (std::getline(in, text)) {
        ++lineno;
        if (text.empty())
            continue;
        try {
            const auto line = json::parse(text);
            m_responses[request_key(line.at("request"))] = line.at("response");
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

std::string ReplayTransport::call(const std::string& request) {
    json envelope;
    try {
        envelope = json::parse(request);
    } catch (const json::exception& e) {
        throw BackendError(BackendError::Kind::Transport, "REPLAY_MISS", std::string("request is not JSON: ") + e.what());
    }
    auto it = m_responses.find(request_key(envelope));
    if (it == m_responses.end())
        throw BackendError(BackendError::Kind::Transport, "REPLAY_MISS",
                           "no recorded response for op '" + envelope.value("op", std::string{}) + "'");
    json response = it->second;
    response["id"] = envelope["id"];
    return response.dump();
}

// --- client ---

RemoteBackend::RemoteBackend(std::shared_ptr<Transport> transport) : m_transport(std::move(transport)) {}

json RemoteBackend::rpc(const std::string& op, json payload) {
    const std::string id = "r" + std::to_string(m_next_id.fetch_add(1));
    const json envelope{{"id", id}, {"op", op}, {"payload", std::move(payload)}};
    const std::string body = m_transport->call(envelope.dump());

    json response;
    try {
        response = json::parse(body);
    } catch (const json::exception& e) {
        throw BackendError(BackendError::Kind::Protocol, "BAD_RESPONSE", std::string("not JSON: ") + e.what());
    }
    if (!response.is_object() || !response.contains("id") || response["id"] != id)
        throw BackendError(BackendError::Kind::Protocol, "BAD_RESPONSE", "response id does not match request " + id);
    if (response.contains("error")) {
        const auto& err = response["error"];
        const auto code = err.is_object() ? err.value("code", std::string("INTERNAL")) : std::string("INTERNAL");
        const auto message = err.is_object() ? err.value("message", std::string{}) : std::string{};
        throw BackendError(BackendError::Kind::Remote, code, message);
    }
    if (!response.contains("payload") || response.value("op", std::string{}) != op)
        throw BackendError(BackendError::Kind::Protocol, "BAD_RESPONSE", "response to " + id + " lacks op or payload");
    return response["payload"];
}

BackendManifest RemoteBackend::manifest() {
    std::call_once(m_manifest_once, [&] {
        BackendManifest m;
        try {
            m = manifest_from_json(rpc("manifest", json::object()));
        } catch (const ParseError& e) {
            throw BackendError(BackendError::Kind::Protocol, "BAD_RESPONSE", e.what());
        }
        if (m.protocol_version != kProtocolVersion)
            throw BackendError(BackendError::Kind::Version, "VERSION_MISMATCH",
                               "backend speaks protocol " + std::to_string(m.protocol_version) + ", client " +
                                   std::to_string(kProtocolVersion));
        if (schedule_digest(m.alphas_cumprod) != m.schedule_digest)
            throw BackendError(BackendError::Kind::Protocol, "BAD_RESPONSE", "schedule digest does not match constants");
        m_manifest = std::move(m);
    });
    return m_manifest;
}

DenoiseResponse RemoteBackend::denoise(const DenoiseRequest& request) {
    const bool attention = manifest().capabilities.attention;
    DenoiseResponse r;
    try {
        r = denoise_response_from_json(rpc("denoise", to_json(request)));
    } catch (const ParseError& e) {
        throw BackendError(BackendError::Kind::Protocol, "BAD_RESPONSE", e.what());
    }
    check_denoise_response(request, r, attention && request.branch == Branch::Conditional);
    return r;
}

Tensor RemoteBackend::encode(const Tensor& image) {
    const auto m = manifest();
    Tensor latent;
    try {
        latent = tensor_from_json(field<json>(rpc("encode", {{"image", tensor_to_json(image)}}), "latent"));
    } catch (const ParseError& e) {
        throw BackendError(BackendError::Kind::Protocol, "BAD_RESPONSE", e.what());
    }
    const std::vector<std::uint32_t> want{image.height() / m.downscale, image.width() / m.downscale,
                                          static_cast<std::uint32_t>(m.latent_channels)};
    if (latent.dims() != want)
        throw BackendError(BackendError::Kind::Protocol, "DIMS_MISMATCH",
                           "encoded latent has dims " + dims_to_string(latent.dims()) + ", expected " +
                               dims_to_string(want));
    return latent;
}

Tensor RemoteBackend::decode(const Tensor& latent) {
    const auto m = manifest();
    Tensor image;
    try {
        image = tensor_from_json(field<json>(rpc("decode", {{"latent", tensor_to_json(latent)}}), "image"));
    } catch (const ParseError& e) {
        throw BackendError(BackendError::Kind::Protocol, "BAD_RESPONSE", e.what());
    }
    const std::vector<std::uint32_t> want{latent.height() * m.downscale, latent.width() * m.downscale, 3};
    if (image.dims() != want)
        throw BackendError(BackendError::Kind::Protocol, "DIMS_MISMATCH",
                           "decoded image has dims " + dims_to_string(image.dims()) + ", expected " +
                               dims_to_string(want));
    return image;
}

SegmentationResult RemoteBackend::segment(const SegmentRequest& request) {
    SegmentationResult r;
    try {
        r = segmentation_from_json(rpc("segment", to_json(request)));
    } catch (const ParseError& e) {
        throw BackendError(BackendError::Kind::Protocol, "BAD_RESPONSE", e.what());
    }
    check_segment_response(request, r);
    return r;
}

BackendSet make_remote_backends(std::shared_ptr<Transport> transport) {
    auto remote = std::make_shared<RemoteBackend>(std::move(transport));
    return {remote, remote, remote};
}

// --- server ---

struct RpcServer::Impl {
    std::shared_ptr<Dispatcher> dispatcher;
    httplib::Server server;
    std::thread thread;
};

RpcServer::RpcServer(std::shared_ptr<Dispatcher> dispatcher) : m_impl(std::make_unique<Impl>()) {
    m_impl->dispatcher = std::move(dispatcher);
    m_impl->server.Post(kRpcPath, [d = m_impl->dispatcher](const httplib::Request& req, httplib::Response& res) {
        res.set_content(d->handle(req.body), "application/json");
    });
    m_impl->server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("{\"ok\":true}", "application/json");
    });
}

RpcServer::~RpcServer() {
    stop();
}

int RpcServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = m_impl->server.bind_to_any_port(host);
    } else if (!m_impl->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0)
        throw Error("cannot bind " + host + ":" + std::to_string(port));
    m_impl->thread = std::thread([this] { m_impl->server.listen_after_bind(); });
    m_impl->server.wait_until_ready();
    return bound;
}

void RpcServer::wait() {
    if (m_impl->thread.joinable())
        m_impl->thread.join();
}

void RpcServer::stop() {
    m_impl->server.stop();
    if (m_impl->thread.joinable())
        m_impl->thread.join();
}

}  // namespace xsyn::wire
