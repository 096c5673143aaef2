// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "golden.hpp"
#include "httplib.h"
#include "xsyn/errors.hpp"
#include "xsyn/latent_engine.hpp"
#include "xsyn/mock_backends.hpp"
#include "xsyn/wire.hpp"
#include "xsyn/xten.hpp"

using namespace xsyn;
using namespace xsyn::backends;
using namespace xsyn::wire;
using nlohmann::json;

namespace {

std::shared_ptr<SceneStore> small_scenes() {
    auto store = std::make_shared<SceneStore>();
    SceneDescriptor s;
    s.image_id = "w1";
    s.width = 16;
    s.height = 16;
    s.shapes = {{PlantedShape::Kind::Rect, {0, 0, 16, 16}, 0.1f, "bg"},
                {PlantedShape::Kind::Rect, {2, 2, 10, 8}, 0.9f, "a"},
                {PlantedShape::Kind::Ellipse, {9, 9, 15, 15}, 0.7f, "b"}};
    store->add(s);
    return store;
}

std::shared_ptr<Dispatcher> mock_dispatcher() {
    return std::make_shared<Dispatcher>(make_mock_backends(7, small_scenes()));
}

Tensor scene_image() {
    return render_scene(*small_scenes()->find("w1"));
}

DenoiseRequest small_denoise() {
    DenoiseRequest r;
    r.latent = Tensor({2, 2, 9});
    fill_gaussian(r.latent.data(), 9);
    r.timestep = 980;
    r.prompt = "Knife";
    r.entities = {{"Knife", {2, 2, 10, 8}}};
    return r;
}

SegmentRequest small_prompt() {
    SegmentRequest r;
    r.image = scene_image();
    r.mode = SegmentMode::Prompt;
    r.image_id = "w1";
    r.box = Box{1, 1, 11, 9};
    r.points = {{3, 3, Polarity::Foreground}, {12, 12, Polarity::Background}};
    return r;
}

// The sequence of calls recorded into the golden transcript.
void exercise(RemoteBackend& remote) {
    remote.manifest();
    remote.denoise(small_denoise());
    auto uncond = small_denoise();
    uncond.branch = Branch::Unconditional;
    uncond.prompt.clear();
    uncond.entities.clear();
    remote.denoise(uncond);
    const auto latent = remote.encode(scene_image());
    remote.decode(latent);
    SegmentRequest auto_req;
    auto_req.image = scene_image();
    auto_req.image_id = "w1";
    remote.segment(auto_req);
    remote.segment(small_prompt());
}

// Transport that hands back a fixed body.
class CannedTransport final : public Transport {
public:
    explicit CannedTransport(std::function<json(const json&)> reply) : m_reply(std::move(reply)) {}
    std::string call(const std::string& request) override { return m_reply(json::parse(request)).dump(); }

private:
    std::function<json(const json&)> m_reply;
};

BackendError::Kind kind_of(const std::function<void()>& f, std::string* code = nullptr) {
    try {
        f();
    } catch (const BackendError& e) {
        if (code)
            *code = e.code();
        return e.kind();
    }
    FAIL("expected BackendError");
    return BackendError::Kind::Remote;
}

std::filesystem::path temp_file(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("xsyn_test_wire_" + name);
    std::filesystem::remove(p);
    return p;
}

}  // namespace

TEST_CASE("tensor codec round trip and rejection") {
    Tensor t({3, 2, 2});
    fill_gaussian(t.data(), 1);
    const auto j = tensor_to_json(t);
    CHECK(j.size() == 1);
    CHECK(bit_equal(tensor_from_json(j), t));
    CHECK_THROWS_AS(tensor_from_json(json{{"xten_b64", "!!!"}}), ParseError);
    CHECK_THROWS_AS(tensor_from_json(json{{"xten_b64", "eHN5biE="}}), ParseError);
    CHECK_THROWS_AS(tensor_from_json(json::object()), ParseError);
}

TEST_CASE("payload codecs round trip") {
    const auto m = mock_manifest();
    const auto mb = manifest_from_json(to_json(m));
    CHECK(mb.backend_id == m.backend_id);
    CHECK(mb.alphas_cumprod == m.alphas_cumprod);
    CHECK(mb.schedule_digest == m.schedule_digest);

    const auto d = small_denoise();
    const auto db = denoise_request_from_json(to_json(d));
    CHECK(bit_equal(db.latent, d.latent));
    CHECK(db.entities == d.entities);
    CHECK(db.prompt == d.prompt);
    CHECK(db.branch == d.branch);
    CHECK(db.timestep == d.timestep);

    MockDenoiser den(7);
    const auto resp = den.denoise(d);
    const auto rb = denoise_response_from_json(to_json(resp));
    CHECK(bit_equal(rb.noise, resp.noise));
    REQUIRE(rb.attention.size() == 1);
    CHECK(bit_equal(rb.attention[0], resp.attention[0]));

    const auto s = small_prompt();
    const auto sb = segment_request_from_json(to_json(s));
    CHECK(sb.points == s.points);
    CHECK(sb.box == s.box);
    CHECK(sb.mode == SegmentMode::Prompt);

    OracleSegmenter seg;
    const auto sr = seg.segment(s);
    const auto srb = segmentation_from_json(to_json(sr));
    REQUIRE(srb.masks.size() == 1);
    CHECK(srb.masks[0].area == sr.masks[0].area);
    CHECK(srb.masks[0].bbox == sr.masks[0].bbox);
    auto bad = to_json(sr);
    bad["masks"][0]["area"] = 1;
    CHECK_THROWS_AS(segmentation_from_json(bad), ParseError);
}

TEST_CASE("request_key ignores the id only") {
    const json a{{"id", "r1"}, {"op", "manifest"}, {"payload", json::object()}};
    const json b{{"id", "r9"}, {"op", "manifest"}, {"payload", json::object()}};
    const json c{{"id", "r1"}, {"op", "encode"}, {"payload", json::object()}};
    CHECK(request_key(a) == request_key(b));
    CHECK(request_key(a) != request_key(c));
}

TEST_CASE("dispatcher error mapping") {
    auto d = mock_dispatcher();
    auto code = [&](const std::string& body) {
        const auto r = json::parse(d->handle(body));
        return r.contains("error") ? r["error"]["code"].get<std::string>() : std::string("OK");
    };
    CHECK(code("not json") == kBadRequest);
    CHECK(code(R"({"id": "1"})") == kBadRequest);
    CHECK(code(R"({"id": [1], "op": "manifest"})") == kBadRequest);
    CHECK(code(R"({"id": "1", "op": "manifest"})") == "OK");
    CHECK(code(R"({"id": 5, "op": "teleport", "payload": {}})") == kUnsupported);
    CHECK(code(R"({"id": "1", "op": "encode", "payload": {}})") == kBadRequest);
    CHECK(code(R"({"id": "1", "op": "encode", "payload": {"image": {"xten_b64": "%%%"}}})") == kBadRequest);

    json enc{{"id", "2"}, {"op", "encode"}, {"payload", {{"image", tensor_to_json(Tensor({12, 16, 3}))}}}};
    CHECK(code(enc.dump()) == kDimsMismatch);

    json seg{{"id", "3"}, {"op", "segment"}, {"payload", to_json(small_prompt())}};
    seg["payload"]["mode"] = "auto";
    seg["payload"]["image_id"] = "unknown";
    CHECK(code(seg.dump()) == kBadRequest);

    const auto r = json::parse(d->handle(std::string(R"({"id": 42, "op": "manifest"})")));
    CHECK(r["id"] == 42);
    CHECK(r["op"] == "manifest");
}

TEST_CASE("remote backend over a local transport equals the in-process backends") {
    auto remote = std::make_shared<RemoteBackend>(std::make_shared<LocalTransport>(mock_dispatcher()));
    const auto local = make_mock_backends(7, small_scenes());
    CHECK(remote->manifest().schedule_digest == local.denoiser->manifest().schedule_digest);
    CHECK(bit_equal(remote->denoise(small_denoise()).noise, local.denoiser->denoise(small_denoise()).noise));
    const auto img = scene_image();
    CHECK(bit_equal(remote->encode(img), local.codec->encode(img)));
    CHECK(bit_equal(remote->decode(local.codec->encode(img)), local.codec->decode(local.codec->encode(img))));
    CHECK(bit_equal(remote->segment(small_prompt()).masks[0].mask, local.segmenter->segment(small_prompt()).masks[0].mask));

    // Remote errors keep their code.
    std::string code;
    CHECK(kind_of([&] { remote->encode(Tensor({12, 16, 3})); }, &code) == BackendError::Kind::Remote);
    CHECK(code == kDimsMismatch);
}

TEST_CASE("client validation failures") {
    std::string code;
    SUBCASE("malformed base64 in a response") {
        RemoteBackend r(std::make_shared<CannedTransport>([](const json& req) {
            if (req["op"] == "manifest")
                return json{{"id", req["id"]}, {"op", "manifest"}, {"payload", to_json(mock_manifest())}};
            return json{{"id", req["id"]}, {"op", req["op"]}, {"payload", {{"latent", {{"xten_b64", "@@"}}}}}};
        }));
        CHECK(kind_of([&] { r.encode(Tensor({16, 16, 3})); }, &code) == BackendError::Kind::Protocol);
        CHECK(code == "BAD_RESPONSE");
    }
    SUBCASE("protocol version mismatch") {
        RemoteBackend r(std::make_shared<CannedTransport>([](const json& req) {
            auto m = to_json(mock_manifest());
            m["protocol_version"] = 2;
            return json{{"id", req["id"]}, {"op", "manifest"}, {"payload", m}};
        }));
        CHECK(kind_of([&] { r.manifest(); }, &code) == BackendError::Kind::Version);
        CHECK(code == "VERSION_MISMATCH");
    }
    SUBCASE("tampered schedule") {
        RemoteBackend r(std::make_shared<CannedTransport>([](const json& req) {
            auto m = to_json(mock_manifest());
            m["alphas_cumprod"][10] = 0.5;
            return json{{"id", req["id"]}, {"op", "manifest"}, {"payload", m}};
        }));
        CHECK(kind_of([&] { r.manifest(); }) == BackendError::Kind::Protocol);
    }
    SUBCASE("wrong dims from the backend") {
        RemoteBackend r(std::make_shared<CannedTransport>([](const json& req) {
            if (req["op"] == "manifest")
                return json{{"id", req["id"]}, {"op", "manifest"}, {"payload", to_json(mock_manifest())}};
            return json{{"id", req["id"]}, {"op", req["op"]}, {"payload", {{"latent", tensor_to_json(Tensor({3, 3, 4}))}}}};
        }));
        CHECK(kind_of([&] { r.encode(Tensor({16, 16, 3})); }, &code) == BackendError::Kind::Protocol);
        CHECK(code == kDimsMismatch);
    }
    SUBCASE("mismatched id") {
        RemoteBackend r(std::make_shared<CannedTransport>(
            [](const json&) { return json{{"id", "other"}, {"op", "manifest"}, {"payload", json::object()}}; }));
        CHECK(kind_of([&] { r.manifest(); }, &code) == BackendError::Kind::Protocol);
    }
}

TEST_CASE("HTTP transport against a server on an ephemeral port") {
    RpcServer server(mock_dispatcher());
    const int port = server.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    HttpOptions opt;
    opt.endpoint = "127.0.0.1:" + std::to_string(port);
    auto remote = std::make_shared<RemoteBackend>(std::make_shared<HttpTransport>(opt));
    const auto local = make_mock_backends(7, small_scenes());
    CHECK(bit_equal(remote->denoise(small_denoise()).noise, local.denoiser->denoise(small_denoise()).noise));
    CHECK(remote->segment(small_prompt()).masks[0].bbox == local.segmenter->segment(small_prompt()).masks[0].bbox);

    httplib::Client client("127.0.0.1", port);
    const auto health = client.Get("/v1/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    const auto err = client.Post(kRpcPath, "{", "application/json");
    REQUIRE(err);
    CHECK(err->status == 200);
    CHECK(json::parse(err->body)["error"]["code"] == kBadRequest);
    server.stop();
}

TEST_CASE("HTTP transport retries 5xx and gives up on unreachable endpoints") {
    httplib::Server flaky;
    std::atomic<int> hits{0};
    auto d = mock_dispatcher();
    flaky.Post(kRpcPath, [&](const httplib::Request& req, httplib::Response& res) {
        if (hits.fetch_add(1) < 2) {
            res.status = 503;
            return;
        }
        res.set_content(d->handle(req.body), "application/json");
    });
    const int port = flaky.bind_to_any_port("127.0.0.1");
    std::thread t([&] { flaky.listen_after_bind(); });
    flaky.wait_until_ready();

    HttpOptions opt;
    opt.endpoint = "http://127.0.0.1:" + std::to_string(port);
    opt.backoff_ms = 1;
    RemoteBackend remote(std::make_shared<HttpTransport>(opt));
    CHECK(remote.manifest().backend_id == "xsyn-mock/1 value-noise");
    CHECK(hits.load() == 3);
    flaky.stop();
    t.join();

    HttpOptions dead;
    dead.endpoint = "127.0.0.1:" + std::to_string(port);
    dead.retries = 1;
    dead.backoff_ms = 1;
    dead.timeout_ms = 500;
    RemoteBackend gone(std::make_shared<HttpTransport>(dead));
    std::string code;
    CHECK(kind_of([&] { gone.manifest(); }, &code) == BackendError::Kind::Transport);
    CHECK(code == "UNREACHABLE");
    CHECK_THROWS_AS(HttpTransport(HttpOptions{}), ConfigError);
}

TEST_CASE("record then replay reproduces every response") {
    const auto path = temp_file("record.jsonl");
    {
        auto rec = std::make_shared<RecordingTransport>(std::make_shared<LocalTransport>(mock_dispatcher()), path);
        RemoteBackend remote(rec);
        exercise(remote);
    }
    auto replay = std::make_shared<ReplayTransport>(path);
    CHECK(replay->size() == 7);
    RemoteBackend again(replay);
    exercise(again);
    const auto local = make_mock_backends(7, small_scenes());
    CHECK(bit_equal(again.denoise(small_denoise()).noise, local.denoiser->denoise(small_denoise()).noise));

    auto other = small_denoise();
    other.timestep = 1;
    std::string code;
    CHECK(kind_of([&] { again.denoise(other); }, &code) == BackendError::Kind::Transport);
    CHECK(code == "REPLAY_MISS");
}

TEST_CASE("golden transcript: recorded bytes and server conformance") {
    const auto path = temp_file("golden.jsonl");
    {
        auto rec = std::make_shared<RecordingTransport>(std::make_shared<LocalTransport>(mock_dispatcher()), path);
        RemoteBackend remote(rec);
        exercise(remote);
    }
    CHECK(golden::check_text("transcript.jsonl", golden::read_text(path)) == "");

    // Any conforming server must answer every frozen request with the frozen response.
    std::ifstream in(golden::path("transcript.jsonl"));
    auto d = mock_dispatcher();
    int lines = 0;
    for (std::string text; std::getline(in, text);) {
        const auto line = json::parse(text);
        CHECK(d->handle(line["request"]) == line["response"]);
        ++lines;
    }
    CHECK(lines == 7);
}
