#include <chrono>
#include <fstream>
#include <thread>

#include "catch_amalgamated.hpp"
#include "cwm/engine.hpp"
#include "cwm/mocks.hpp"
#include "support/harness.hpp"
#include "support/random_templates.hpp"
#include "support/test_util.hpp"

using namespace cwm;
using namespace std::chrono_literals;

namespace {

const std::string kSentence = "Monteux was born in Paris";
const std::string kPer = "http://dkt.dfki.de/ontologies/nif#PER";
const std::string kLoc = "http://dkt.dfki.de/ontologies/nif#LOC";
const std::string kGnd = "http://d-nb.info/gnd/122700198";
const std::string kGeo = "http://www.geonames.org/2988507";

// Registry with the ML_GLK template and NER/GEO services at the given
// endpoints (any absolute URL works for tests that never dispatch HTTP).
void register_ml_glk(testutil::EngineHarness& h, const std::string& ner_endpoint = "http://ner/",
                     const std::string& geo_endpoint = "http://geo/") {
  h.add_service("NERTask", "NER", ner_endpoint);
  h.add_service("GEOTask", "GEO", geo_endpoint);
  h.add_template(cwdl::parse_template(testutil::listing(3)));
}

int node_of(const ExecutionStatus& status, cwdl::NodeKind kind, const std::string& task_id = {}) {
  for (const auto& n : status.nodes)
    if (n.kind == kind && (task_id.empty() || n.task_id == task_id)) return n.id;
  return -1;
}

NodeState state_of(const ExecutionStatus& status, int id) {
  for (const auto& n : status.nodes)
    if (n.id == id) return n.state;
  FAIL("no node " << id);
  return NodeState::waiting;
}

Envelope reply_for(const Envelope& request, std::string payload,
                   std::string content_type = "text/turtle") {
  Envelope r;
  r.message_id = request.message_id + "-reply";
  r.execution_id = request.execution_id;
  r.node_id = request.node_id;
  r.content_type = std::move(content_type);
  r.payload = std::move(payload);
  return r;
}

}  // namespace

TEST_CASE("create_execution validates, compiles and starts PENDING", "[engine]") {
  testutil::EngineHarness h;
  register_ml_glk(h);

  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::normal);
  ExecutionStatus status = h.engine().status(id);
  CHECK(status.state == ExecState::pending);
  CHECK(status.template_id == "ML_GLK");
  CHECK(status.nodes.size() == 6);  // source, split, NER, GEO, combiner, sink
  for (const auto& n : status.nodes) CHECK(n.state == NodeState::waiting);
  CHECK(h.broker().stats().published == 0);

  SECTION("unknown template") {
    CHECK_THROWS_AS(h.engine().create_execution("nope", kSentence, "text/plain", Priority::normal),
                    UnknownTemplateError);
  }
  SECTION("dangling reference fails validation with findings") {
    h.registry().remove("tasks", "GEOTask");
    try {
      h.engine().create_execution("ML_GLK", kSentence, "text/plain", Priority::normal);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      REQUIRE_FALSE(e.report().findings.empty());
      CHECK(e.report().findings[0].message == "unresolved taskId GEOTask");
    }
  }
  SECTION("turtle input must be valid NIF") {
    CHECK_THROWS_AS(h.engine().create_execution("ML_GLK", "junk", "text/turtle", Priority::normal),
                    ValidationError);
    std::string turtle = nif::serialize(nif::make_context(kSentence, "http://x.org/d/"));
    CHECK_NOTHROW(h.engine().create_execution("ML_GLK", turtle, "text/turtle", Priority::normal));
  }
  SECTION("unknown execution id") {
    CHECK_THROWS_AS(h.engine().status("ex-999"), UnknownExecutionError);
    CHECK_THROWS_AS(h.engine().result("ex-999"), UnknownExecutionError);
  }
}

TEST_CASE("start dispatches one envelope per ready service node", "[engine]") {
  testutil::EngineHarness h;
  register_ml_glk(h);

  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::normal);
  h.engine().start(id);
  CHECK_THROWS_AS(h.engine().start(id), IllegalStateError);  // only PENDING can start

  // both services fan out from the split with identical payloads
  CHECK(h.broker().queue_stats("NER_input_normal").published == 1);
  CHECK(h.broker().queue_stats("GEO_input_normal").published == 1);
  CHECK(h.broker().queue_stats("NER_input_prio").published == 0);

  auto ner = h.broker().consume_next(QueuePair{"NER_input_normal", "NER_input_prio"});
  auto geo = h.broker().consume_next(QueuePair{"GEO_input_normal", "GEO_input_prio"});
  REQUIRE(ner);
  REQUIRE(geo);
  CHECK(ner->envelope.payload == geo->envelope.payload);
  CHECK(ner->envelope.execution_id == id);
  CHECK(nif::parse(ner->envelope.payload).context_text == kSentence);

  ExecutionStatus status = h.engine().status(id);
  CHECK(status.state == ExecState::running);
  CHECK(state_of(status, node_of(status, cwdl::NodeKind::source)) == NodeState::done);
  CHECK(state_of(status, node_of(status, cwdl::NodeKind::split)) == NodeState::done);
  CHECK(state_of(status, node_of(status, cwdl::NodeKind::service, "NERTask")) ==
        NodeState::dispatched);
  CHECK(state_of(status, node_of(status, cwdl::NodeKind::wait_combiner)) == NodeState::waiting);
}

TEST_CASE("priority executions ride the priority queues end to end", "[engine]") {
  testutil::EngineHarness h;
  register_ml_glk(h);
  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::priority);
  h.engine().start(id);
  CHECK(h.broker().queue_stats("NER_input_prio").published == 1);
  CHECK(h.broker().queue_stats("GEO_input_prio").published == 1);
  CHECK(h.broker().queue_stats("NER_input_normal").published == 0);
  auto d = h.broker().consume_next(QueuePair{"NER_input_normal", "NER_input_prio"});
  REQUIRE(d);
  CHECK(d->envelope.priority == Priority::priority);
  CHECK(d->envelope.reply_queue == h.engine().reply_queue_pair().priority);
}

TEST_CASE("small inputs are promoted to priority when the threshold is set", "[engine]") {
  EngineOptions options;
  options.priority_size_threshold = 1024;
  testutil::EngineHarness h({}, options);
  register_ml_glk(h);
  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::normal);
  CHECK(h.engine().status(id).priority == Priority::priority);

  std::string large(2048, 'x');
  std::string id2 = h.engine().create_execution("ML_GLK", large, "text/plain", Priority::normal);
  CHECK(h.engine().status(id2).priority == Priority::normal);
}

TEST_CASE("replies flow through the combiner to completion", "[engine]") {
  testutil::EngineHarness h;
  register_ml_glk(h);
  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::normal);
  h.engine().start(id);

  // play the controllers by hand: NER reply adds PER, GEO reply adds LOC
  auto ner = h.broker().consume_next(QueuePair{"NER_input_normal", "NER_input_prio"});
  auto geo = h.broker().consume_next(QueuePair{"GEO_input_normal", "GEO_input_prio"});
  REQUIRE(ner);
  REQUIRE(geo);
  nif::NifDocument doc = nif::parse(ner->envelope.payload);

  h.engine().handle_result(reply_for(ner->envelope,
                                     nif::serialize(nif::annotate(doc, 0, 7, kPer, kGnd))));
  h.broker().ack(ner->tag);
  CHECK(h.engine().status(id).state == ExecState::running);

  h.engine().handle_result(reply_for(geo->envelope,
                                     nif::serialize(nif::annotate(doc, 20, 25, kLoc, kGeo))));
  h.broker().ack(geo->tag);

  ExecutionStatus status = h.engine().status(id);
  CHECK(status.state == ExecState::completed);
  for (const auto& n : status.nodes) CHECK(n.state == NodeState::done);
  REQUIRE(status.finished_at.has_value());

  nif::NifDocument result = nif::parse(h.engine().result(id));
  REQUIRE(result.annotations.size() == 2);
  CHECK(result.annotations[0].anchor_of == "Monteux");
  CHECK(result.annotations[0].entity_class == kPer);
  CHECK(result.annotations[1].anchor_of == "Paris");
  CHECK(result.annotations[1].entity_class == kLoc);
}

TEST_CASE("duplicate replies are ignored idempotently", "[engine]") {
  testutil::EngineHarness h;
  register_ml_glk(h);
  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::normal);
  h.engine().start(id);
  auto ner = h.broker().consume_next(QueuePair{"NER_input_normal", "NER_input_prio"});
  REQUIRE(ner);
  nif::NifDocument doc = nif::parse(ner->envelope.payload);
  std::string annotated = nif::serialize(nif::annotate(doc, 0, 7, kPer, kGnd));

  h.engine().handle_result(reply_for(ner->envelope, annotated));
  ExecutionStatus before = h.engine().status(id);
  h.engine().handle_result(reply_for(ner->envelope, annotated));  // duplicate
  ExecutionStatus after = h.engine().status(id);
  CHECK(before.state == after.state);
  CHECK(h.engine().metrics().duplicate_replies == 1);
  // GEO still dispatched exactly once
  CHECK(h.broker().queue_stats("GEO_input_normal").published == 1);
}

TEST_CASE("replies that correlate to nothing raise and count", "[engine]") {
  testutil::EngineHarness h;
  register_ml_glk(h);
  Envelope ghost;
  ghost.execution_id = "ex-404";
  ghost.node_id = "2";
  ghost.content_type = "text/turtle";
  CHECK_THROWS_AS(h.engine().handle_result(ghost), UnknownCorrelationError);

  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::normal);
  h.engine().start(id);
  Envelope bad_node;
  bad_node.execution_id = id;
  bad_node.node_id = "notanode";
  CHECK_THROWS_AS(h.engine().handle_result(bad_node), UnknownCorrelationError);
  // a waiting (never dispatched) node is a correlation error too
  ExecutionStatus status = h.engine().status(id);
  Envelope not_dispatched;
  not_dispatched.execution_id = id;
  not_dispatched.node_id = std::to_string(node_of(status, cwdl::NodeKind::wait_combiner));
  CHECK_THROWS_AS(h.engine().handle_result(not_dispatched), UnknownCorrelationError);
  CHECK(h.engine().metrics().unknown_correlations == 3);
}

TEST_CASE("an error reply fails the execution and keeps partial results", "[engine]") {
  testutil::EngineHarness h;
  register_ml_glk(h);
  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::normal);
  h.engine().start(id);
  auto ner = h.broker().consume_next(QueuePair{"NER_input_normal", "NER_input_prio"});
  auto geo = h.broker().consume_next(QueuePair{"GEO_input_normal", "GEO_input_prio"});
  REQUIRE(ner);
  REQUIRE(geo);

  nif::NifDocument doc = nif::parse(ner->envelope.payload);
  h.engine().handle_result(reply_for(ner->envelope,
                                     nif::serialize(nif::annotate(doc, 0, 7, kPer, kGnd))));

  nlohmann::json problem = {{"title", "service request failed"}, {"status", 502},
                            {"detail", "bad gateway"}, {"attempts", 3}};
  h.engine().handle_result(reply_for(geo->envelope, problem.dump(), kProblemContentType));

  ExecutionStatus status = h.engine().status(id);
  CHECK(status.state == ExecState::failed);
  REQUIRE(status.failure.has_value());
  CHECK(status.failure->status == 502);
  CHECK(status.failure->attempts == 3);
  int geo_node = node_of(status, cwdl::NodeKind::service, "GEOTask");
  CHECK(status.failure->node_id == std::to_string(geo_node));
  CHECK(state_of(status, geo_node) == NodeState::errored);

  // the NER branch result stays inspectable
  int ner_node = node_of(status, cwdl::NodeKind::service, "NERTask");
  auto partial = h.engine().branch_results(id);
  REQUIRE(partial.contains(ner_node));
  CHECK(nif::parse(partial.at(ner_node)).annotations.size() == 1);

  try {
    h.engine().result(id);
    FAIL("expected FailedExecutionError");
  } catch (const FailedExecutionError& e) {
    CHECK(e.failure().status == 502);
  }

  // late replies to the failed execution are counted, not applied
  h.engine().handle_result(reply_for(geo->envelope, "whatever"));
  CHECK(h.engine().metrics().late_replies == 1);
}

TEST_CASE("result demands a COMPLETED execution", "[engine]") {
  testutil::EngineHarness h;
  register_ml_glk(h);
  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::normal);
  CHECK_THROWS_AS(h.engine().result(id), NotFinishedError);
  h.engine().start(id);
  CHECK_THROWS_AS(h.engine().result(id), NotFinishedError);
}

TEST_CASE("cancel suppresses dispatches and ignores stragglers", "[engine]") {
  testutil::EngineHarness h;
  register_ml_glk(h);

  SECTION("cancel PENDING publishes nothing") {
    std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                                 Priority::normal);
    h.engine().cancel(id);
    CHECK(h.engine().status(id).state == ExecState::cancelled);
    CHECK(h.broker().stats().published == 0);
    CHECK_THROWS_AS(h.engine().start(id), IllegalStateError);
  }
  SECTION("cancel RUNNING with one branch done fires no combiner") {
    std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                                 Priority::normal);
    h.engine().start(id);
    auto ner = h.broker().consume_next(QueuePair{"NER_input_normal", "NER_input_prio"});
    REQUIRE(ner);
    nif::NifDocument doc = nif::parse(ner->envelope.payload);
    h.engine().handle_result(reply_for(ner->envelope,
                                       nif::serialize(nif::annotate(doc, 0, 7, kPer, kGnd))));
    h.engine().cancel(id);
    ExecutionStatus status = h.engine().status(id);
    CHECK(status.state == ExecState::cancelled);
    CHECK(state_of(status, node_of(status, cwdl::NodeKind::wait_combiner)) == NodeState::waiting);

    // a GEO reply arriving after cancellation changes nothing
    auto geo = h.broker().consume_next(QueuePair{"GEO_input_normal", "GEO_input_prio"});
    REQUIRE(geo);
    h.engine().handle_result(reply_for(geo->envelope, geo->envelope.payload));
    CHECK(h.engine().status(id).state == ExecState::cancelled);
    CHECK(h.engine().metrics().late_replies == 1);
  }
  SECTION("cancel COMPLETED is illegal") {
    std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                                 Priority::normal);
    h.engine().cancel(id);
    CHECK_THROWS_AS(h.engine().cancel(id), IllegalStateError);
  }
}

TEST_CASE("erase only removes terminal executions", "[engine]") {
  testutil::EngineHarness h;
  register_ml_glk(h);
  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::normal);
  CHECK_THROWS_AS(h.engine().erase(id), IllegalStateError);
  h.engine().cancel(id);
  CHECK(h.engine().erase(id));
  CHECK_FALSE(h.engine().exists(id));
}

TEST_CASE("non-terminal executions pin the elements they reference", "[engine]") {
  testutil::EngineHarness h;
  register_ml_glk(h);
  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::normal);
  CHECK(h.engine().references("templates", "ML_GLK"));
  CHECK(h.engine().references("tasks", "NERTask"));
  CHECK(h.engine().references("controllers", "GEO"));
  CHECK_FALSE(h.engine().references("controllers", "Other"));
  h.engine().cancel(id);
  CHECK_FALSE(h.engine().references("templates", "ML_GLK"));
}

TEST_CASE("the event log records node and state transitions", "[engine]") {
  testutil::TempDir tmp;
  EngineOptions options;
  options.event_log_path = (tmp.path / "events.jsonl").string();
  testutil::EngineHarness h({}, options);
  register_ml_glk(h);
  std::string id = h.engine().create_execution("ML_GLK", kSentence, "text/plain",
                                               Priority::normal);
  h.engine().start(id);
  h.engine().cancel(id);

  std::ifstream in(options.event_log_path);
  REQUIRE(in.good());
  std::string line;
  std::vector<nlohmann::json> events;
  while (std::getline(in, line)) events.push_back(nlohmann::json::parse(line));
  REQUIRE_FALSE(events.empty());
  for (const auto& e : events) {
    CHECK(e.contains("ts"));
    CHECK(e.contains("executionId"));
    CHECK(e.contains("nodeId"));
    CHECK(e.contains("transition"));
  }
  bool saw_running = false, saw_cancelled = false, saw_dispatch = false;
  for (const auto& e : events) {
    std::string t = e["transition"];
    if (t == "PENDING->RUNNING") saw_running = true;
    if (t == "RUNNING->CANCELLED") saw_cancelled = true;
    if (t == "WAITING->DISPATCHED") saw_dispatch = true;
  }
  CHECK(saw_running);
  CHECK(saw_cancelled);
  CHECK(saw_dispatch);
}

TEST_CASE("full run against live mocks matches the appendix entities", "[engine][e2e]") {
  mocks::MockService ner({{{"Monteux", kPer, kGnd}}});
  mocks::MockService geo({{{"Paris", kLoc, kGeo}}});
  ner.start();
  geo.start();

  testutil::EngineHarness h;
  h.add_service("NERTask", "NER", ner.base_url());
  h.add_service("GEOTask", "GEO", geo.base_url());
  h.add_template(cwdl::parse_template(testutil::listing(3)));
  h.start();

  std::string id = h.run("ML_GLK", kSentence);
  REQUIRE(h.engine().status(id).state == ExecState::completed);
  nif::NifDocument result = nif::parse(h.engine().result(id));
  REQUIRE(result.annotations.size() == 2);
  CHECK(result.annotations[0].anchor_of == "Monteux");
  CHECK(result.annotations[1].anchor_of == "Paris");
  CHECK(result.annotations[1].ident_ref == kGeo);
}

TEST_CASE("mid-run status shows dispatched services while a mock is paused", "[engine][e2e]") {
  mocks::MockService ner({{{"Monteux", kPer, kGnd}}});
  ner.start();
  ner.pause();

  testutil::EngineHarness h;
  h.add_service("NERTask", "NER", ner.base_url());
  cwdl::WorkflowTemplate tmpl;
  tmpl.name = "single";
  tmpl.id = "SINGLE";
  tmpl.tasks.push_back(cwdl::TaskNode{cwdl::ServiceNode{1, "NERTask"}});
  h.add_template(tmpl);
  h.start();

  std::string id = h.engine().create_execution("SINGLE", kSentence, "text/plain",
                                               Priority::normal);
  h.engine().start(id);
  // wait until the controller picked the envelope up and is blocked in the mock
  for (int i = 0; i < 100 && ner.request_log().empty(); ++i) std::this_thread::sleep_for(10ms);
  REQUIRE_FALSE(ner.request_log().empty());

  ExecutionStatus status = h.engine().status(id);
  CHECK(status.state == ExecState::running);
  CHECK(state_of(status, node_of(status, cwdl::NodeKind::source)) == NodeState::done);
  CHECK(state_of(status, node_of(status, cwdl::NodeKind::service, "NERTask")) ==
        NodeState::dispatched);

  ner.resume();
  REQUIRE(h.engine().wait_terminal(id, 5s));
  CHECK(h.engine().status(id).state == ExecState::completed);
}

TEST_CASE("reference interpreter handles singles and the parallel template", "[engine]") {
  std::map<std::string, std::function<std::string(const std::string&)>> fns;
  fns["NERTask"] = [](const std::string& in) {
    nif::NifDocument d = nif::parse(in);
    return nif::serialize(nif::annotate(d, 0, 7, kPer, kGnd));
  };
  fns["GEOTask"] = [](const std::string& in) {
    nif::NifDocument d = nif::parse(in);
    return nif::serialize(nif::annotate(d, 20, 25, kLoc, kGeo));
  };
  std::string input = nif::serialize(nif::make_context(kSentence, "http://x.org/d/"));

  SECTION("single node applies the service function") {
    cwdl::WorkflowTemplate tmpl;
    tmpl.id = "S";
    tmpl.tasks.push_back(cwdl::TaskNode{cwdl::ServiceNode{1, "NERTask"}});
    std::string out = reference_interpreter(tmpl, input, fns);
    CHECK(out == fns.at("NERTask")(input));
  }
  SECTION("parallel template merges both annotations") {
    cwdl::WorkflowTemplate tmpl = cwdl::parse_template(testutil::listing(3));
    nif::NifDocument out = nif::parse(reference_interpreter(tmpl, input, fns));
    REQUIRE(out.annotations.size() == 2);
    CHECK(out.annotations[0].anchor_of == "Monteux");
    CHECK(out.annotations[1].anchor_of == "Paris");
  }
}

TEST_CASE("engine and reference interpreter agree on random templates", "[engine][property]") {
  // shared fixed mocks: service i annotates occurrences of "w<i>"
  const std::string text = "w0 w1 w2 w3 w4 w5";
  std::vector<std::unique_ptr<mocks::MockService>> mock_servers;
  std::map<std::string, std::function<std::string(const std::string&)>> fns;
  for (int i = 0; i < 6; ++i) {
    std::string word = "w" + std::to_string(i);
    std::vector<mocks::GazetteerEntry> gaz = {
        {word, "http://example.org/class/S" + std::to_string(i),
         "http://example.org/id/" + std::to_string(i)}};
    mock_servers.push_back(std::make_unique<mocks::MockService>(mocks::MockServiceConfig{gaz}));
    mock_servers.back()->start();
    fns["svc" + std::to_string(i)] = [gaz](const std::string& in) {
      return nif::serialize(mocks::apply_gazetteer(nif::parse(in), gaz));
    };
  }

  for (unsigned seed = 0; seed < 25; ++seed) {
    testutil::TemplateGenerator gen(seed);
    testutil::RandomTemplate rt = gen.generate("R" + std::to_string(seed));
    CAPTURE(seed);

    testutil::EngineHarness h;
    for (const auto& svc : rt.service_ids) {
      int idx = svc.back() - '0';
      h.add_service(svc, "C" + svc, mock_servers[static_cast<std::size_t>(idx)]->base_url());
    }
    h.add_template(rt.tmpl);
    h.start();

    std::string id = h.run(rt.tmpl.id, text);
    REQUIRE(h.engine().status(id).state == ExecState::completed);
    std::string expected = reference_interpreter(
        rt.tmpl, nif::serialize(nif::make_context(text, "http://cwm.local/documents/")), fns);
    CHECK(nif::parse(h.engine().result(id)) == nif::parse(expected));
  }
}
