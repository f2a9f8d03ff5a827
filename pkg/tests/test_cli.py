import filecmp
import json
import math
import re
import shutil
from pathlib import Path
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from rolemaddpg import config as cfgmod, metrics, neural
from rolemaddpg.cli import main, sweep_table
from rolemaddpg.maddpg import Trainer, make_learners
from rolemaddpg.replay import ROLE_COLORS, render_svg
from rolemaddpg.env import Role

SMALL = """
preset = "multi-target"
output_dir = "unused"

[world]
n_pursuers = 2
n_evaders = 1
n_obstacles = 2
episode_length = 8

[training]
episodes = 4
batch_size = 8
update_every = 4
hidden = [8, 8]
checkpoint_every = 2
trajectory_every = 2
progress_every = 1
seed = 5
"""


@pytest.fixture
def conf(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(SMALL)
    return p


def tree_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(tree_equal(Path(a) / d, Path(b) / d) for d in cmp.common_dirs)


class TestConfig:
    def test_round_trip(self, conf):
        run = cfgmod.load(conf)
        again = cfgmod.loads(run.dumps())
        assert again == run
        assert cfgmod.loads(again.dumps()).dumps() == run.dumps()

    def test_presets(self):
        assert cfgmod.preset("multi-target").world.n_scouts == 0
        rb = cfgmod.preset("role-based").world
        assert (rb.n_pursuers, rb.n_scouts, rb.n_evaders, rb.n_obstacles) == (5, 5, 2, 3)
        dd = cfgmod.preset("drone-demo").world
        assert (dd.n_pursuers, dd.n_scouts, dd.n_evaders) == (2, 3, 1)

    @pytest.mark.parametrize("text, key", [
        ("[rewards]\nc4 = 1.0\n", "rewards.c4"),
        ("colour = 1\n", "colour"),
        ("[world]\nn_pursuers = 1\nn_evaders = 2\n", "world"),
        ('preset = "nope"\n', "nope"),
    ])
    def test_errors_name_the_key(self, text, key):
        with pytest.raises(cfgmod.ConfigError, match=re.escape(key)):
            cfgmod.loads(text)

    def test_reward_defaults(self):
        r = cfgmod.loads("").rewards
        assert (r.catch_reward, r.caught_penalty, r.c3) == (20.0, -10.0, 10.0)


class TestTrainCommand:
    def test_missing_config(self, tmp_path, capsys):
        missing = tmp_path / "nope.toml"
        assert main(["train", str(missing)]) != 0
        assert str(missing) in capsys.readouterr().err

    def test_invalid_config(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text("[training]\ngama = 0.9\n")
        assert main(["train", str(p), "--out", str(tmp_path / "o")]) == 2
        assert "training.gama" in capsys.readouterr().err

    def test_smoke(self, conf, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["train", str(conf), "--out", str(out), "--episodes", "1"]) == 0
        assert "PROGRESS episode=0" in capsys.readouterr().out
        agg = metrics.read_aggregate_csv(out / "aggregate.csv")
        assert [a["episode"] for a in agg] == [0]
        rows = metrics.read_trajectory_csv(out / "trajectories" / "ep_000000.csv")
        assert len(rows) == 8 * 3
        assert json.loads((out / "trajectories" / "ep_000000.obstacles.json").read_text())["obstacles"]
        assert cfgmod.load(out / "config.toml").training.episodes == 1
        for ck in ("ep_000000", "ep_000001"):
            d = out / "checkpoints" / ck
            json.loads((d / "manifest.json").read_text())
            with open(d / "agent_00.spnn", "rb") as f:
                assert neural.read_record(f)[0].layer_dims[-1] == 2
        assert json.loads((out / "run_manifest.json").read_text())["episodes"] == 1

    def test_env_var_output(self, conf, tmp_path, monkeypatch):
        monkeypatch.setenv("ROLEMADDPG_OUTPUT_DIR", str(tmp_path / "env_out"))
        assert main(["train", str(conf), "--episodes", "1"]) == 0
        assert (tmp_path / "env_out" / "aggregate.csv").is_file()

    def test_determinism_and_resume(self, conf, tmp_path):
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        assert main(["train", str(conf), "--out", str(a)]) == 0
        assert main(["train", str(conf), "--out", str(b)]) == 0
        assert (a / "aggregate.csv").read_bytes() == (b / "aggregate.csv").read_bytes()
        assert tree_equal(a / "checkpoints", b / "checkpoints")
        # resume a copy of the run from its mid-training checkpoint
        shutil.copytree(a, c)
        shutil.rmtree(c / "checkpoints" / "ep_000004")
        assert main(["train", str(conf), "--out", str(c), "--resume", "latest"]) == 0
        assert (a / "aggregate.csv").read_bytes() == (c / "aggregate.csv").read_bytes()
        assert tree_equal(a / "checkpoints", c / "checkpoints")


class TestEvalCommand:
    def zero_checkpoint(self, conf, tmp_path):
        run = cfgmod.load(conf)
        tr = Trainer(run.world, run.rewards, run.training)
        tr.learners = make_learners(run.world, run.training, None, zero_init=True)
        return tr.save_checkpoint(tmp_path / "zero", run.to_dict())

    def test_zero_init_rollout(self, conf, tmp_path, capsys):
        ck = self.zero_checkpoint(conf, tmp_path)
        assert main(["eval", str(ck), "--episodes", "3", "--seed", "2"]) == 0
        agg = metrics.read_aggregate_csv(ck / "eval_aggregate.csv")
        assert len(agg) == 3
        assert all(math.isfinite(r["min_d"]) and math.isfinite(r["max_d"]) for r in agg)
        out = capsys.readouterr().out
        assert "| mean of min dist | mean of ave dist | mean of max dist |" in out

    def test_deterministic(self, conf, tmp_path):
        out = tmp_path / "o"
        assert main(["train", str(conf), "--out", str(out), "--episodes", "2"]) == 0
        ck = out / "checkpoints" / "ep_000002"
        assert main(["eval", str(ck), "--episodes", "2", "--out", str(tmp_path / "e1.csv")]) == 0
        assert main(["eval", str(ck), "--episodes", "2", "--out", str(tmp_path / "e2.csv")]) == 0
        assert (tmp_path / "e1.csv").read_bytes() == (tmp_path / "e2.csv").read_bytes()

    def test_mismatch(self, conf, tmp_path, capsys):
        ck = self.zero_checkpoint(conf, tmp_path)
        m = json.loads((ck / "manifest.json").read_text())
        m["config"]["world"]["n_obstacles"] = 3
        (ck / "manifest.json").write_text(json.dumps(m))
        assert main(["eval", str(ck), "--episodes", "1"]) == 2
        assert "observation length" in capsys.readouterr().err

    def test_missing_manifest(self, tmp_path):
        assert main(["eval", str(tmp_path), "--episodes", "1"]) == 2

    def test_coverage_report(self, conf, tmp_path, capsys):
        ck = self.zero_checkpoint(conf, tmp_path)
        assert main(["coverage-report", str(ck), "--episodes", "2"]) == 0
        assert re.search(r"COVERAGE team=pursuers\+scouts range=0.5 episodes=2 mean=0\.\d{4}", capsys.readouterr().out)


class TestSweep:
    def test_single_row(self, conf, tmp_path, capsys):
        out = tmp_path / "s"
        assert main(["sweep-pursuers", str(conf), "--min", "2", "--max", "2", "--out", str(out)]) == 0
        lines = (out / "sweep_pursuers.csv").read_text().splitlines()
        assert lines[0] == "n_p,mean_min_dist" and len(lines) == 2
        assert lines[1].startswith("2,")
        assert "SWEEP sufficient_n_p=" in capsys.readouterr().out

    def test_table_logic(self):
        series = {2: [9, 0.63], 3: [9, 0.55], 4: [9, 0.60], 5: [9, 0.46], 6: [9, 0.461]}
        rows, sufficient, flagged = sweep_table(series, skip=1)
        assert [r[0] for r in rows] == [2, 3, 4, 5, 6]
        assert sufficient == 5  # first below the 0.5 m sensing range
        assert flagged == [4]  # 0.60 > 0.55 + 0.01; 0.461 is within tolerance

    def test_bad_range(self, conf, capsys):
        assert main(["sweep-pursuers", str(conf), "--min", "0", "--max", "2"]) == 2


class TestReplay:
    def write(self, tmp_path, rows):
        p = tmp_path / "t.csv"
        p.write_text(",".join(metrics.TRAJECTORY_COLUMNS) + "\n" + "".join(r + "\n" for r in rows))
        return p

    def test_empty(self, tmp_path):
        svg = ET.fromstring(render_svg([], 3.0))
        kids = list(svg)
        assert len(kids) == 1 and kids[0].get("class") == "arena"

    def test_stationary_dot(self, tmp_path):
        p = self.write(tmp_path, [f"0,{t},0,scout,1.0,-1.0,0,0,0,0,0,0,0,0" for t in range(3)])
        assert main(["replay", str(p), "--svg", str(tmp_path / "o.svg")]) == 0
        svg = ET.fromstring((tmp_path / "o.svg").read_text())
        ns = "{http://www.w3.org/2000/svg}"
        assert not svg.findall(f"{ns}polyline")
        (dot,) = svg.findall(f"{ns}circle[@class='marker']")
        assert dot.get("fill") == "blue"
        # 20 px margin + 4 m * (560 px / 6 m)
        assert (float(dot.get("cx")), float(dot.get("cy"))) == (393.333, 393.333)

    def test_colours_follow_roles(self, conf, tmp_path):
        out = tmp_path / "o"
        assert main(["train", str(conf), "--out", str(out), "--episodes", "1"]) == 0
        traj = out / "trajectories" / "ep_000000.csv"
        svg_path = tmp_path / "r.svg"
        assert main(["replay", str(traj), "--svg", str(svg_path)]) == 0
        first = svg_path.read_bytes()
        assert main(["replay", str(traj), "--svg", str(svg_path)]) == 0
        assert svg_path.read_bytes() == first
        roles = {r["agent_id"]: r["role"] for r in metrics.read_trajectory_csv(traj)}
        svg = ET.fromstring(first)
        ns = "{http://www.w3.org/2000/svg}"
        lines = svg.findall(f"{ns}polyline")
        assert len(lines) == len(roles)
        for pl in lines:
            assert pl.get("stroke") == ROLE_COLORS[roles[int(pl.get("data-agent"))]]
        assert len(svg.findall(f"{ns}circle[@class='obstacle']")) == 2

    def test_malformed(self, tmp_path, capsys):
        p = self.write(tmp_path, ["0,0,0,pursuer,1,2,3,4,5,6,7,8,9,10", "0,1,0,pursuer,1,2,3"])
        assert main(["replay", str(p)]) == 2
        assert ":3:" in capsys.readouterr().err
