#include <chrono>
#include <thread>

#include "catch_amalgamated.hpp"
#include "cwm/api.hpp"
#include "cwm/mocks.hpp"
#include "support/harness.hpp"
#include "support/test_util.hpp"

using namespace cwm;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

const std::string kSentence = "Monteux was born in Paris";
const std::string kToken = "secret-alice";

struct Client {
  explicit Client(const ApiServer& server, std::string token = kToken)
      : http("127.0.0.1", server.port()), token_(std::move(token)) {
    http.set_read_timeout(10s);
  }

  httplib::Headers auth() const {
    if (token_.empty()) return {};
    return {{"Authorization", "Bearer " + token_}};
  }

  httplib::Result get(const std::string& path) { return http.Get(path, auth()); }
  httplib::Result post(const std::string& path, const std::string& body,
                       const std::string& type = "application/json") {
    return http.Post(path, auth(), body, type);
  }
  httplib::Result put(const std::string& path, const std::string& body) {
    return http.Put(path, auth(), body, "application/json");
  }
  httplib::Result del(const std::string& path) { return http.Delete(path, auth()); }

  httplib::Client http;
  std::string token_;
};

ServerConfig test_config(bool auto_init = true) {
  ServerConfig config;
  config.port = 0;
  config.allowlist = {{"alice", kToken}, {"bob", "secret-bob"}};
  config.auto_init = auto_init;
  return config;
}

json body_of(const httplib::Result& res) {
  REQUIRE(res);
  return json::parse(res->body);
}

// Two live mocks plus a fully registered NER+GEO workflow.
struct Fixture {
  Fixture() : server(test_config()) {
    ner.start();
    geo.start();
    server.start();
    Client client(server);
    auto ner_spec = testutil::make_controller("NER", ner.base_url());
    auto geo_spec = testutil::make_controller("GEO", geo.base_url());
    REQUIRE(client.post("/elements/controllers", cwdl::serialize(ner_spec))->status == 201);
    REQUIRE(client.post("/elements/controllers", cwdl::serialize(geo_spec))->status == 201);
    REQUIRE(client.post("/elements/tasks", testutil::listing(2))->status == 201);
    REQUIRE(client.post("/elements/tasks",
                        cwdl::serialize(testutil::make_task("GEOTask", "GEO")))->status == 201);
    REQUIRE(client.post("/elements/templates", testutil::listing(3))->status == 201);
  }

  mocks::MockService ner{{{{"Monteux", "http://dkt.dfki.de/ontologies/nif#PER",
                            "http://d-nb.info/gnd/122700198"}}}};
  mocks::MockService geo{{{{"Paris", "http://dkt.dfki.de/ontologies/nif#LOC",
                            "http://www.geonames.org/2988507"}}}};
  ApiServer server;
};

std::string wait_state(Client& client, const std::string& id, std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    auto res = client.get("/executions/" + id + "/status");
    std::string state = body_of(res)["state"];
    if (state != "PENDING" && state != "RUNNING") return state;
    std::this_thread::sleep_for(20ms);
  }
  return "TIMEOUT";
}

}  // namespace

TEST_CASE("health is the only anonymous endpoint", "[api]") {
  ApiServer server(test_config());
  server.start();
  Client anonymous(server, "");

  auto health = anonymous.get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(body_of(health)["status"] == "ok");

  // every other endpoint rejects missing tokens with 401
  CHECK(anonymous.get("/elements/controllers")->status == 401);
  CHECK(anonymous.get("/elements/controllers/X")->status == 401);
  CHECK(anonymous.post("/elements/controllers", "{}")->status == 401);
  CHECK(anonymous.put("/elements/controllers/X", "{}")->status == 401);
  CHECK(anonymous.del("/elements/controllers/X")->status == 401);
  CHECK(anonymous.post("/executions", "{}")->status == 401);
  CHECK(anonymous.get("/executions/x/status")->status == 401);
  CHECK(anonymous.get("/executions/x/result")->status == 401);
  CHECK(anonymous.post("/executions/x/cancel", "")->status == 401);
  CHECK(anonymous.post("/admin/init", "")->status == 401);
  CHECK(anonymous.post("/admin/stop", "")->status == 401);
}

TEST_CASE("tokens authenticate and the allowlist authorizes", "[api]") {
  ApiServer server(test_config());
  server.start();

  SECTION("valid token") {
    Client alice(server);
    CHECK(alice.get("/elements/controllers")->status == 200);
  }
  SECTION("unknown token is 401") {
    Client mallory(server, "wrong-token");
    CHECK(mallory.get("/elements/controllers")->status == 401);
  }
  SECTION("user removed from the allowlist after issuance is 403") {
    Client bob(server, "secret-bob");
    CHECK(bob.get("/elements/controllers")->status == 200);
    server.access().set_allowlist({"alice"});  // config reload drops bob
    CHECK(bob.get("/elements/controllers")->status == 403);
    Client alice(server);
    CHECK(alice.get("/elements/controllers")->status == 200);
  }
}

TEST_CASE("element CRUD round-trips CWDL definitions", "[api]") {
  ApiServer server(test_config());
  server.start();
  Client client(server);

  // create
  auto created = client.post("/elements/controllers", testutil::listing(1));
  CHECK(created->status == 201);
  CHECK(body_of(created)["id"] == "NERController");

  // duplicate create
  CHECK(client.post("/elements/controllers", testutil::listing(1))->status == 409);

  // view
  auto viewed = client.get("/elements/controllers/NERController");
  CHECK(viewed->status == 200);
  CHECK(body_of(viewed) == json::parse(testutil::listing(1)));

  // list
  auto listed = client.get("/elements/controllers");
  CHECK(listed->status == 200);
  CHECK(body_of(listed).size() == 1);

  // modify
  json updated = json::parse(testutil::listing(1));
  updated["controllerName"] = "Renamed";
  auto put = client.put("/elements/controllers/NERController", updated.dump());
  CHECK(put->status == 200);
  CHECK(body_of(client.get("/elements/controllers/NERController"))["controllerName"] == "Renamed");

  // id mismatch between path and body
  CHECK(client.put("/elements/controllers/SomethingElse", updated.dump())->status == 404);
  json renamed = updated;
  renamed["controllerId"] = "Other";
  CHECK(client.put("/elements/controllers/NERController", renamed.dump())->status == 400);

  // delete
  CHECK(client.del("/elements/controllers/NERController")->status == 204);
  CHECK(client.get("/elements/controllers/NERController")->status == 404);
  CHECK(client.del("/elements/controllers/NERController")->status == 404);

  // unknown kinds are 404
  CHECK(client.get("/elements/widgets")->status == 404);
  CHECK(client.post("/elements/widgets", "{}")->status == 404);
}

TEST_CASE("invalid elements are rejected with a validation report", "[api]") {
  ApiServer server(test_config());
  server.start();
  Client client(server);

  SECTION("malformed JSON") {
    auto res = client.post("/elements/controllers", "{nope");
    CHECK(res->status == 400);
    json report = body_of(res);
    CHECK(report["ok"] == false);
    REQUIRE_FALSE(report["findings"].empty());
    CHECK(report["findings"][0]["severity"] == "error");
  }
  SECTION("schema violation names the path") {
    json j = json::parse(testutil::listing(1));
    j.erase("controllerId");
    auto res = client.post("/elements/controllers", j.dump());
    CHECK(res->status == 400);
    CHECK(body_of(res)["findings"][0]["path"] == "$.controllerId");
  }
  SECTION("task referencing a missing controller") {
    auto res = client.post("/elements/tasks", testutil::listing(2));
    CHECK(res->status == 400);
    json report = body_of(res);
    CHECK(report["findings"][0]["message"].get<std::string>().find("unresolved controllerId") !=
          std::string::npos);
  }
  SECTION("template referencing missing tasks") {
    auto res = client.post("/elements/templates", testutil::listing(3));
    CHECK(res->status == 400);
  }
  SECTION("server-side report equals offline validation") {
    auto res = client.post("/elements/templates", testutil::listing(3));
    ValidationReport offline =
        cwdl::validate(cwdl::parse_template(testutil::listing(3)), {}, {});
    CHECK(body_of(res) == offline.to_json());
  }
  SECTION("nothing invalid was stored") {
    client.post("/elements/tasks", testutil::listing(2));
    CHECK(body_of(client.get("/elements/tasks")).empty());
  }
}

TEST_CASE("referenced elements refuse modification and deletion", "[api]") {
  Fixture f;
  Client client(f.server);

  // static references: the NER task references its controller
  CHECK(client.del("/elements/controllers/NER")->status == 409);
  CHECK(client.del("/elements/tasks/NERTask")->status == 409);  // template references it

  // live reference: pause the mocks so the execution stays RUNNING
  f.ner.pause();
  f.geo.pause();
  auto exec = client.post("/executions", json{{"templateId", "ML_GLK"},
                                              {"input", kSentence}}.dump());
  REQUIRE(exec->status == 201);
  std::string id = body_of(exec)["executionId"];

  CHECK(client.del("/elements/templates/ML_GLK")->status == 409);
  CHECK(client.put("/elements/templates/ML_GLK", testutil::listing(3))->status == 409);
  CHECK(client.del("/elements/executions/" + id)->status == 409);  // non-terminal

  // results are not ready yet: 409
  CHECK(client.get("/executions/" + id + "/result")->status == 409);

  f.ner.resume();
  f.geo.resume();
  CHECK(wait_state(client, id, 5s) == "COMPLETED");

  // terminal executions release their references
  CHECK(client.del("/elements/templates/ML_GLK")->status == 204);
  CHECK(client.del("/elements/executions/" + id)->status == 204);
  CHECK(client.get("/executions/" + id + "/status")->status == 404);
}

TEST_CASE("full lifecycle: register, execute, poll, fetch the merged result", "[api][e2e]") {
  Fixture f;
  Client client(f.server);

  auto exec = client.post("/executions", json{{"templateId", "ML_GLK"},
                                              {"input", kSentence},
                                              {"inputType", "text/plain"}}.dump());
  REQUIRE(exec->status == 201);
  std::string id = body_of(exec)["executionId"];
  CHECK(id.rfind("ex-", 0) == 0);

  CHECK(wait_state(client, id, 5s) == "COMPLETED");

  auto status = client.get("/executions/" + id + "/status");
  json sj = body_of(status);
  CHECK(sj["templateId"] == "ML_GLK");
  for (const auto& node : sj["nodes"]) CHECK(node["state"] == "DONE");
  CHECK(sj.contains("finishedAt"));

  auto result = client.get("/executions/" + id + "/result");
  REQUIRE(result);
  CHECK(result->status == 200);
  CHECK(result->get_header_value("Content-Type").rfind("text/turtle", 0) == 0);
  nif::NifDocument doc = nif::parse(result->body);
  REQUIRE(doc.annotations.size() == 2);
  CHECK(doc.annotations[0].anchor_of == "Monteux");
  CHECK(doc.annotations[1].anchor_of == "Paris");

  // executions list includes the run
  auto listed = client.get("/elements/executions");
  CHECK(body_of(listed).size() == 1);
  CHECK(body_of(client.get("/elements/executions/" + id))["state"] == "COMPLETED");
}

TEST_CASE("execution error paths map to HTTP statuses", "[api]") {
  Fixture f;
  Client client(f.server);

  SECTION("unknown template is 404") {
    CHECK(client.post("/executions", json{{"templateId", "nope"}, {"input", "x"}}.dump())->status ==
          404);
  }
  SECTION("missing fields are 400") {
    CHECK(client.post("/executions", json{{"templateId", "ML_GLK"}}.dump())->status == 400);
    CHECK(client.post("/executions", "{broken")->status == 400);
  }
  SECTION("unknown execution ids are 404") {
    CHECK(client.get("/executions/ex-77/status")->status == 404);
    CHECK(client.get("/executions/ex-77/result")->status == 404);
    CHECK(client.post("/executions/ex-77/cancel", "")->status == 404);
  }
  SECTION("cancel flows") {
    f.ner.pause();
    f.geo.pause();
    auto exec = client.post("/executions", json{{"templateId", "ML_GLK"},
                                                {"input", kSentence}}.dump());
    std::string id = body_of(exec)["executionId"];
    CHECK(client.post("/executions/" + id + "/cancel", "")->status == 200);
    CHECK(body_of(client.get("/executions/" + id + "/status"))["state"] == "CANCELLED");
    CHECK(client.post("/executions/" + id + "/cancel", "")->status == 409);  // already terminal
    CHECK(client.get("/executions/" + id + "/result")->status == 409);
    f.ner.resume();
    f.geo.resume();
  }
  SECTION("failed executions give 422 with the failure report") {
    f.ner.set_fail_next(100);
    auto exec = client.post("/executions", json{{"templateId", "ML_GLK"},
                                                {"input", kSentence}}.dump());
    std::string id = body_of(exec)["executionId"];
    CHECK(wait_state(client, id, 10s) == "FAILED");
    auto result = client.get("/executions/" + id + "/result");
    CHECK(result->status == 422);
    json body = body_of(result);
    CHECK(body["failure"]["status"] == 500);
    CHECK(body["failure"]["attempts"] == 3);
    f.ner.set_fail_next(0);
  }
}

TEST_CASE("init and stop control the runtime without killing the server", "[api]") {
  mocks::MockService ner({{{"Monteux", "http://dkt.dfki.de/ontologies/nif#PER", ""}}});
  ner.start();

  ApiServer server(test_config(/*auto_init=*/false));
  server.start();
  Client client(server);
  CHECK_FALSE(server.initialized());

  // executing before init is refused
  auto spec = testutil::make_controller("NER", ner.base_url());
  REQUIRE(client.post("/elements/controllers", cwdl::serialize(spec))->status == 201);
  REQUIRE(client.post("/elements/tasks", testutil::listing(2))->status == 201);
  json tmpl = {{"workflowTemplateName", "single"},
               {"workflowTemplateId", "SINGLE"},
               {"workflowTemplateDescription", ""},
               {"tasks", json::array({{{"order", 1}, {"taskId", "NERTask"}}})}};
  REQUIRE(client.post("/elements/templates", tmpl.dump())->status == 201);
  CHECK(client.post("/executions", json{{"templateId", "SINGLE"},
                                        {"input", kSentence}}.dump())->status == 409);

  // init is idempotent
  CHECK(client.post("/admin/init", "")->status == 200);
  CHECK(client.post("/admin/init", "")->status == 200);
  CHECK(server.initialized());

  auto exec = client.post("/executions", json{{"templateId", "SINGLE"},
                                              {"input", kSentence}}.dump());
  REQUIRE(exec->status == 201);
  std::string id = body_of(exec)["executionId"];
  CHECK(wait_state(client, id, 5s) == "COMPLETED");

  // stop drains and the server keeps answering queries
  CHECK(client.post("/admin/stop", "")->status == 200);
  CHECK_FALSE(server.initialized());
  CHECK(client.get("/executions/" + id + "/status")->status == 200);
  CHECK(client.get("/health")->status == 200);
}

TEST_CASE("elements persist to the data directory and reload", "[api]") {
  testutil::TempDir tmp;
  ServerConfig config = test_config();
  config.data_dir = tmp.path;
  {
    ApiServer server(config);
    server.start();
    Client client(server);
    REQUIRE(client.post("/elements/controllers", testutil::listing(1))->status == 201);
    CHECK(std::filesystem::exists(tmp.path / "controllers" / "NERController.json"));
    server.stop();
  }
  {
    ApiServer server(config);
    server.start();
    Client client(server);
    auto res = client.get("/elements/controllers/NERController");
    CHECK(res->status == 200);
    CHECK(body_of(res) == json::parse(testutil::listing(1)));
    // delete removes the file
    CHECK(client.del("/elements/controllers/NERController")->status == 204);
    CHECK_FALSE(std::filesystem::exists(tmp.path / "controllers" / "NERController.json"));
  }
}

TEST_CASE("turtle input is accepted directly", "[api]") {
  Fixture f;
  Client client(f.server);
  std::string turtle = nif::serialize(nif::make_context(kSentence, "http://x.org/doc/"));
  auto exec = client.post("/executions", json{{"templateId", "ML_GLK"},
                                              {"input", turtle},
                                              {"inputType", "text/turtle"}}.dump());
  REQUIRE(exec->status == 201);
  std::string id = body_of(exec)["executionId"];
  CHECK(wait_state(client, id, 5s) == "COMPLETED");
  nif::NifDocument doc = nif::parse(client.get("/executions/" + id + "/result")->body);
  CHECK(doc.base_uri == "http://x.org/doc/");  // context travels unchanged
  CHECK(doc.annotations.size() == 2);
}
