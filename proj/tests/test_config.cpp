#include <cstdlib>

#include "doctest.h"
#include "rarecp/checkpoint.hpp"
#include "rarecp/config.hpp"
#include "rarecp/error.hpp"
#include "test_util.hpp"

using namespace rarecp;

TEST_SUITE("config") {

TEST_CASE("defaults mirror the documented values") {
  const RunConfig c;
  CHECK(c.context.window == 64);
  CHECK(c.context.include_forecast);
  CHECK(c.train.n_experts == 3);
  CHECK(c.train.expert.k == 32);
  CHECK(c.train.expert.beta == 12.0);
  CHECK(c.train.expert.latent_dim == 32);
  CHECK(c.train.expert.hidden_dim == 96);
  CHECK(c.train.expert.hidden_layers == 2);
  CHECK(c.train.gate.hidden_dim == 4);
  CHECK(c.train.lambda_anchor == 5.0);
  CHECK(c.train.lambda_entropy == 0.02);
  CHECK(c.train.student_lr == 1e-3);
  CHECK(c.train.gate_lr == 4e-3);
  CHECK(c.train.epochs == 100);
  CHECK(c.train.batch_size == 256);
  CHECK(c.train.loss.schedule.tau_start == 0.05);
  CHECK(c.train.loss.schedule.tau_end == 1e-4);
  CHECK(c.train.loss.tau_p == 5e-4);
  CHECK(c.eval.alpha == 0.2);
  CHECK(c.eval.aci_gamma == 0.01);
  CHECK(c.eval.nexcp_decay == 0.99);
}

TEST_CASE("parse, format and reparse") {
  const auto c = parse_config(
      "# comment\n"
      "window = 16\n"
      "topk = 8   # trailing comment\n"
      "encoder = fixed_affine\n"
      "alpha_grid = 0.1,0.2\n"
      "alpha = 0.1\n"
      "seed = 99\n");
  CHECK(c.context.window == 16);
  CHECK(c.train.expert.k == 8);
  CHECK(c.train.expert.encoder == EncoderKind::fixed_affine);
  CHECK(c.train.loss.alpha_grid == std::vector<double>{0.1, 0.2});
  CHECK(c.eval.alpha == 0.1);
  CHECK(c.train.seed == 99);
  const auto again = parse_config(format_config(c));
  CHECK(format_config(again) == format_config(c));
  CHECK(config_key_values(again) == config_key_values(c));
}

TEST_CASE("bad settings are usage errors") {
  CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), UsageError);
  CHECK_THROWS_AS(parse_config("window = abc\n"), UsageError);
  CHECK_THROWS_AS(parse_config("window 5\n"), UsageError);
  CHECK_THROWS_AS(parse_config("alpha = 1.5\n"), UsageError);
  CHECK_THROWS_AS(parse_config("activation = sigmoid\n"), UsageError);
}

TEST_CASE("RARECP_SEED overrides the seed") {
  RunConfig c;
  c.train.seed = 1;
  ::setenv("RARECP_SEED", "123", 1);
  apply_env_overrides(c);
  ::unsetenv("RARECP_SEED");
  CHECK(c.train.seed == 123);
  apply_env_overrides(c);
  CHECK(c.train.seed == 123);
}

TEST_CASE("checkpoint round trip and corruption") {
  RunConfig rc;
  rc.context.window = 4;
  rc.train.n_experts = 2;
  rc.train.expert.latent_dim = 3;
  rc.train.expert.hidden_dim = 5;
  rc.train.gate.embed_dim = 2;
  const std::size_t p = rc.context.dim();
  Checkpoint ck{rc, {}, {}};
  for (std::size_t m = 0; m < 2; ++m) ck.model.experts.push_back(HypernetworkParams::init(rc.train.expert, p, 2, m));
  ck.model.gate = GateParams::init(rc.train.gate, p, 2, 2, 7);
  ck.model.gate.mlp.layers.back().weight.fill(0.125);
  ck.teachers.n_experts = 2;
  ck.teachers.n_datasets = 2;
  for (int i = 0; i < 4; ++i) {
    auto m = AffineMap::identity_like(3, p);
    m.b[1] = 0.1 * i;
    ck.teachers.maps.push_back(m);
  }
  const auto text = serialize_checkpoint(ck);
  const auto back = parse_checkpoint(text);
  CHECK(serialize_checkpoint(back) == text);
  CHECK(back.teachers.at(1, 1).b[1] == doctest::Approx(0.3));
  CHECK(back.model.gate.mlp.layers.back().weight[0] == 0.125);

  testutil::TempDir dir("ckpt");
  save_checkpoint(dir / "a" / "ck.txt", ck);
  CHECK(file_hash(dir / "a" / "ck.txt") == fnv1a_hex(text));
  CHECK(serialize_checkpoint(load_checkpoint(dir / "a" / "ck.txt")) == text);

  CHECK_THROWS_AS(parse_checkpoint("rarecp-checkpoint 99\n"), DataError);
  auto truncated = text.substr(0, text.size() / 2);
  CHECK_THROWS_AS(parse_checkpoint(truncated), DataError);
  auto no_end = text.substr(0, text.rfind("end"));
  CHECK_THROWS_AS(parse_checkpoint(no_end), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.txt"), DataError);
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

}
