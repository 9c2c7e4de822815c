"""Three-stage pipeline: tokenizer training, occupancy-language-action
pretraining, instruction tuning, then the full evaluation battery.

Every stage reads/writes one artifacts directory and records itself in
manifest.json (config echo, derived seeds, checkpoint hashes, metrics), so
a rerun with the same manifest inputs reproduces identical reports.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from ..nn.checkpoint import file_sha256
from ..occ import iou_geometry, miou_semantic, render_bev, write_ppm
from ..tok import (
    SceneTokenizer,
    TokenizerConfig,
    TokenizerTrainConfig,
    train_tokenizer,
)
from ..vocab import UnifiedVocabulary, build_vocabulary, fit_action_bins, serialize_episode
from ..wm import (
    PretrainConfig,
    TuneConfig,
    WorldModel,
    WorldModelConfig,
    instruction_tune,
    load_adapters,
    load_pretrain_checkpoint,
    pretrain,
    save_adapters,
    save_pretrain_checkpoint,
)
from .bundle import ModelBundle, OracleBundle
from .captions import gen_caption
from .evals import EvalReport, eval_forecast, eval_plan, eval_qa
from .qa import gen_qa
from .reports import (
    forecast_figure,
    forecast_table,
    loss_curve_figure,
    plan_figure,
    plan_table,
    qa_figure,
    qa_table,
    write_report,
)
from .synth import PlacementError, Scenario, SynthWorldConfig, gen_scenario


class StageError(RuntimeError):
    def __init__(self, stage: str, step, cause: BaseException):
        super().__init__(f"pipeline stage {stage!r} failed at {step}: {cause}")
        self.stage = stage
        self.step = step


def default_config() -> dict:
    return {
        "seed": 0,
        "world": {
            "h": 16, "w": 16, "d": 4,
            "num_objects": [1, 3], "object_size": [2, 5], "object_height": [1, 3],
            "velocity": [-1, 1], "episode_len": 6, "ego_speed": [0.4, 1.2],
        },
        "data": {
            "train_scenarios": 64, "eval_scenarios": 16,
            "caption_frames": 2, "qa_frames": 2,
        },
        "tokenizer": {
            "r": 4, "c": 64, "k": 128, "window": 8, "point_feat": 64,
            "enc_blocks": 2, "dec_channels": 64,
            "lambdas": [10.0, 5.0, 10.0, 5.0, 5.0],
        },
        "tokenizer_train": {
            "steps": 2000, "lr": 1e-4, "codebook_lr_mult": 3.0,
            "batch_size": 4, "reinit_interval": 150,
        },
        "vocab": {"max_words": 512, "action_bins": 64},
        "wm": {
            "layers": 4, "heads": 4, "d_model": 128, "max_len": 512,
            "spatial_attention": True, "action_tokenization": True,
            "sampling": "greedy", "temperature": 1.0,
        },
        "pretrain": {"steps": 2000, "lr": 1e-4, "batch_size": 4, "checkpoint_every": 0},
        "tune": {"steps": 400, "lr": 5e-5, "batch_size": 4, "rank": 4, "alpha": 8.0},
        "eval": {"history": 2, "horizon": 3, "plan_modes": ["with_scene", "action_only"],
                 "qa_items": 40},
    }


def merge_config(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def set_by_path(cfg: dict, dotted: str, value) -> None:
    node = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def world_config(cfg: dict) -> SynthWorldConfig:
    w = cfg["world"]
    return SynthWorldConfig(
        h=w["h"], w=w["w"], d=w["d"],
        num_objects=tuple(w["num_objects"]),
        object_size=tuple(w["object_size"]),
        object_height=tuple(w["object_height"]),
        velocity=tuple(w["velocity"]),
        episode_len=w["episode_len"],
        ego_speed=tuple(w["ego_speed"]),
    )


def tokenizer_config(cfg: dict) -> TokenizerConfig:
    t = cfg["tokenizer"]
    w = cfg["world"]
    return TokenizerConfig(
        h=w["h"], w=w["w"], d=w["d"], num_classes=6,
        r=t["r"], c=t["c"], k=t["k"], lambdas=tuple(t["lambdas"]),
        window=t["window"], point_feat=t["point_feat"],
        enc_blocks=t["enc_blocks"], dec_channels=t["dec_channels"],
    )


class Datasets:
    """Deterministic scenario/caption/QA sets derived from the root seed."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        wcfg = world_config(cfg)
        seed = cfg["seed"]
        self.train = _draw_scenarios(wcfg, seed, 1, cfg["data"]["train_scenarios"])
        self.eval = _draw_scenarios(wcfg, seed, 2, cfg["data"]["eval_scenarios"])
        self.captions = []
        for si, sc in enumerate(self.train):
            for t in range(min(cfg["data"]["caption_frames"], len(sc.grids))):
                self.captions.append((si, t, gen_caption(sc, t)))
        self.qa_train = []
        self.qa_eval = []
        for items, scen, tag in ((self.qa_train, self.train, 3), (self.qa_eval, self.eval, 4)):
            for si, sc in enumerate(scen):
                for t in range(min(cfg["data"]["qa_frames"], len(sc.grids))):
                    rng = np.random.default_rng(
                        np.random.SeedSequence(entropy=seed, spawn_key=(tag, si, t)))
                    items.extend((si, item) for item in gen_qa(sc, t, rng))

    def corpus(self) -> list[str]:
        lines = ["describe the scene"]
        lines.extend(text for _, _, text in self.captions)
        for si, item in self.qa_train:
            lines.append(item.question)
            lines.append(item.answer)
        return lines


def _draw_scenarios(wcfg: SynthWorldConfig, seed: int, stream: int, count: int) -> list[Scenario]:
    out = []
    idx = 0
    while len(out) < count:
        scenario_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(stream, idx))
                            .generate_state(1)[0])
        idx += 1
        try:
            out.append(gen_scenario(wcfg, scenario_seed))
        except PlacementError:
            continue  # deterministic: the skipped index is skipped every run
    return out


class Pipeline:
    def __init__(self, cfg: dict, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.out / "manifest.json"
        self.manifest = {"config": cfg, "stages": {}, "reports": {}}
        self.datasets: Datasets | None = None
        self.tokenizer: SceneTokenizer | None = None
        self.vocab: UnifiedVocabulary | None = None
        self.model: WorldModel | None = None
        self.adapters: dict | None = None

    # ---- plumbing ----

    def save_manifest(self) -> None:
        with open(self.manifest_path, "w") as f:
            json.dump(self.manifest, f, indent=1, sort_keys=True)

    def _stage(self, name: str, fn):
        try:
            result = fn()
        except Exception as exc:  # noqa: BLE001 - reported with stage context
            step = getattr(exc, "step", "?")
            raise StageError(name, step, exc) from exc
        self.save_manifest()
        return result

    # ---- stage 0: data ----

    def build_datasets(self) -> Datasets:
        def run():
            self.datasets = Datasets(self.cfg)
            self.manifest["stages"]["data"] = {
                "train_scenarios": len(self.datasets.train),
                "eval_scenarios": len(self.datasets.eval),
                "captions": len(self.datasets.captions),
                "qa_train": len(self.datasets.qa_train),
                "qa_eval": len(self.datasets.qa_eval),
            }
            return self.datasets

        return self._stage("data", run)

    # ---- stage 1: scene tokenizer ----

    def stage_tokenizer(self) -> SceneTokenizer:
        def run():
            ds = self.datasets or self.build_datasets()
            grids = [g for sc in ds.train for g in sc.grids]
            tcfg = tokenizer_config(self.cfg)
            tt = self.cfg["tokenizer_train"]
            train_cfg = TokenizerTrainConfig(
                steps=tt["steps"], lr=tt["lr"], codebook_lr_mult=tt.get("codebook_lr_mult", 1.0),
                batch_size=tt["batch_size"], seed=self.cfg["seed"],
                reinit_interval=tt.get("reinit_interval", 250),
            )
            tok, _, log = train_tokenizer(grids, tcfg, train_cfg)
            self.tokenizer = tok
            ckpt = self.out / "tokenizer.ckpt"
            tok.save(ckpt, {"steps": train_cfg.steps, "seed": self.cfg["seed"]})
            loss_curve_figure(log, self.out / "tokenizer_loss.png",
                              keys=("total", "ce_geometry", "ce_semantics", "embedding"),
                              title="tokenizer training")
            recon = self._tokenizer_recon_metrics(tok, ds)
            self.manifest["stages"]["tokenizer"] = {
                "checkpoint": str(ckpt),
                "checkpoint_sha256": file_sha256(ckpt),
                "steps": train_cfg.steps,
                "final_loss": log[-1]["total"],
                "recon": recon,
            }
            return tok

        return self._stage("tokenizer", run)

    def _tokenizer_recon_metrics(self, tok: SceneTokenizer, ds: Datasets) -> dict:
        labels = ds.eval[0].cfg.classes
        grids = [g for sc in ds.eval for g in sc.grids]
        mious = [miou_semantic(tok.reconstruct(g), g, labels) for g in grids]
        ious = [iou_geometry(tok.reconstruct(g), g) for g in grids]
        return {"miou": float(np.mean(mious)), "iou": float(np.mean(ious)), "grids": len(grids)}

    # ---- stage 2: pretraining ----

    def _build_vocab(self, ds: Datasets) -> UnifiedVocabulary:
        trajectories = [sc.ego_displacements for sc in ds.train]
        binner = fit_action_bins(trajectories, self.cfg["vocab"]["action_bins"])
        vocab = build_vocabulary(
            ds.corpus(), scene_size=self.cfg["tokenizer"]["k"], binner=binner,
            scene_len=tokenizer_config(self.cfg).token_len,
            max_words=self.cfg["vocab"]["max_words"],
        )
        vocab.save(self.out / "vocab.json")
        return vocab

    def _wm_config(self, vocab: UnifiedVocabulary) -> WorldModelConfig:
        wm = self.cfg["wm"]
        tcfg = tokenizer_config(self.cfg)
        hr, wr = tcfg.latent_hw
        return WorldModelConfig(
            layers=wm["layers"], heads=wm["heads"], d_model=wm["d_model"],
            max_len=wm["max_len"], scene_len=tcfg.token_len,
            scene_rows=hr, scene_cols=wr, vocab_total=vocab.total,
            spatial_attention=wm["spatial_attention"],
            action_tokenization=wm["action_tokenization"],
            sampling=wm["sampling"], temperature=wm["temperature"],
        )

    def _wm_episodes(self, ds: Datasets, vocab: UnifiedVocabulary, history: int):
        bundle = ModelBundle(self.tokenizer, vocab)
        action_as_text = not self.cfg["wm"]["action_tokenization"]
        episodes = []
        for sc in ds.train:
            disp = sc.ego_displacements
            frames = [(bundle.scene_codes(sc.grids[t]), disp[t]) for t in range(len(disp))]
            episodes.append(serialize_episode(
                frames, vocab, mode="world_model", history=history,
                action_as_text=action_as_text))
        return episodes

    def _caption_episodes(self, ds: Datasets, vocab: UnifiedVocabulary):
        bundle = ModelBundle(self.tokenizer, vocab)
        episodes = []
        for si, t, text in ds.captions:
            codes = bundle.scene_codes(ds.train[si].grids[t])
            episodes.append(serialize_episode(
                [(codes, None)], vocab, prompt_text="describe the scene",
                target_text=text, mode="caption"))
        return episodes

    def _qa_episodes(self, ds: Datasets, vocab: UnifiedVocabulary):
        bundle = ModelBundle(self.tokenizer, vocab)
        episodes = []
        for si, item in ds.qa_train:
            codes = bundle.scene_codes(ds.train[si].grids[item.frame])
            episodes.append(serialize_episode(
                [(codes, None)], vocab, prompt_text=item.question,
                target_text=item.answer, mode="qa"))
        return episodes

    def stage_pretrain(self) -> WorldModel:
        def run():
            ds = self.datasets or self.build_datasets()
            if self.tokenizer is None:
                self._load_tokenizer()
            tok_meta = self.manifest["stages"].get("tokenizer")
            if tok_meta is None:
                raise RuntimeError("tokenizer stage must run before pretraining")
            actual = file_sha256(tok_meta["checkpoint"])
            if actual != tok_meta["checkpoint_sha256"]:
                raise RuntimeError("tokenizer checkpoint hash does not match the manifest")

            vocab = self._build_vocab(ds)
            self.vocab = vocab
            model = WorldModel(self._wm_config(vocab), np.random.default_rng(self.cfg["seed"]))
            history = self.cfg["eval"]["history"]
            wm_eps = self._wm_episodes(ds, vocab, history)
            cap_eps = self._caption_episodes(ds, vocab)
            pc = self.cfg["pretrain"]
            pcfg = PretrainConfig(steps=pc["steps"], lr=pc["lr"], batch_size=pc["batch_size"],
                                  seed=self.cfg["seed"],
                                  checkpoint_every=pc.get("checkpoint_every", 0),
                                  checkpoint_path=str(self.out / "wm_train_state.ckpt"))
            optimizer, log = pretrain(model, wm_eps, cap_eps, vocab, pcfg)
            self.model = model
            ckpt = self.out / "wm.ckpt"
            model.save(ckpt, {"steps": pcfg.steps, "seed": self.cfg["seed"],
                              "tokenizer_sha256": tok_meta["checkpoint_sha256"]})
            save_pretrain_checkpoint(self.out / "wm_train_state.ckpt", model, optimizer,
                                     pcfg.steps)
            loss_curve_figure(log, self.out / "pretrain_loss.png", keys=("loss",),
                              title="occupancy-language-action pretraining")
            self.manifest["stages"]["pretrain"] = {
                "checkpoint": str(ckpt),
                "checkpoint_sha256": file_sha256(ckpt),
                "steps": pcfg.steps,
                "episodes": {"world_model": len(wm_eps), "caption": len(cap_eps)},
                "final_loss": log[-1]["loss"] if log else None,
            }
            return model

        return self._stage("pretrain", run)

    # ---- stage 3: instruction tuning ----

    def stage_tune(self) -> dict:
        def run():
            ds = self.datasets or self.build_datasets()
            if self.tokenizer is None:
                self._load_tokenizer()
            if self.model is None or self.vocab is None:
                self._load_model()
            tc = self.cfg["tune"]
            tcfg = TuneConfig(steps=tc["steps"], lr=tc["lr"], batch_size=tc["batch_size"],
                              rank=tc["rank"], alpha=tc["alpha"], seed=self.cfg["seed"])
            qa_eps = self._qa_episodes(ds, self.vocab)
            base_before = file_sha256(self.out / "wm.ckpt")
            adapters, log = instruction_tune(self.model, qa_eps, self.vocab, tcfg)
            self.adapters = adapters
            if file_sha256(self.out / "wm.ckpt") != base_before:
                raise RuntimeError("base checkpoint changed during instruction tuning")
            apath = self.out / "adapters.ckpt"
            save_adapters(apath, adapters, base_before)
            loss_curve_figure(log, self.out / "tune_loss.png", keys=("loss",),
                              title="instruction tuning (low-rank adapters)")
            self.manifest["stages"]["tune"] = {
                "checkpoint": str(apath),
                "checkpoint_sha256": file_sha256(apath),
                "steps": tcfg.steps,
                "episodes": len(qa_eps),
                "final_loss": log[-1]["loss"] if log else None,
            }
            return adapters

        return self._stage("tune", run)

    # ---- loading persisted stages ----

    def _load_tokenizer(self) -> None:
        path = self.out / "tokenizer.ckpt"
        self.tokenizer, _ = SceneTokenizer.load(path)
        self.manifest["stages"].setdefault("tokenizer", {
            "checkpoint": str(path), "checkpoint_sha256": file_sha256(path)})

    def _load_model(self) -> None:
        self.vocab = UnifiedVocabulary.load(self.out / "vocab.json")
        self.model, _ = WorldModel.load(self.out / "wm.ckpt")
        apath = self.out / "adapters.ckpt"
        if apath.exists():
            self.adapters, _ = load_adapters(apath)

    # ---- evaluations ----

    def bundle(self, with_adapters: bool = False) -> ModelBundle:
        if self.tokenizer is None:
            self._load_tokenizer()
        if self.model is None or self.vocab is None:
            self._load_model()
        return ModelBundle(self.tokenizer, self.vocab, self.model,
                           self.adapters if with_adapters else None)

    def run_evals(self) -> EvalReport:
        def run():
            ds = self.datasets or self.build_datasets()
            ev = self.cfg["eval"]
            bundle = self.bundle()
            report = EvalReport(metadata={
                "seed": self.cfg["seed"],
                "tokenizer_sha256": self.manifest["stages"]["tokenizer"]["checkpoint_sha256"],
                "wm_sha256": self.manifest["stages"].get("pretrain", {}).get("checkpoint_sha256"),
                "spatial_attention": self.cfg["wm"]["spatial_attention"],
                "action_tokenization": self.cfg["wm"]["action_tokenization"],
            })

            report.forecast = eval_forecast(bundle, ds.eval, ev["history"], ev["horizon"])
            paths = write_report(self.out, "forecast", report.forecast,
                                 forecast_table(report.forecast), forecast_figure)
            self.manifest["reports"]["forecast"] = {
                "paths": paths, "avg": report.forecast["avg"]}

            plans = {}
            for mode in ev["plan_modes"]:
                plan = eval_plan(bundle, ds.eval, ev["history"], ev["horizon"], mode=mode)
                paths = write_report(self.out, f"plan_{mode}", plan, plan_table(plan),
                                     plan_figure)
                plans[mode] = plan
                self.manifest["reports"][f"plan_{mode}"] = {"paths": paths, "avg": plan["avg"]}
            report.plan = plans

            qa_bundle = self.bundle(with_adapters=True)
            qa_items = [(ds.eval[si].grids[item.frame], item)
                        for si, item in ds.qa_eval][: ev["qa_items"]]
            report.qa = eval_qa(qa_bundle, qa_items)
            paths = write_report(self.out, "qa", report.qa, qa_table(report.qa), qa_figure)
            self.manifest["reports"]["qa"] = {"paths": paths, "overall": report.qa["overall"]}

            with open(self.out / "report.json", "w") as f:
                json.dump(report.to_json(), f, indent=1, sort_keys=True)
            return report

        return self._stage("evals", run)

    def render_samples(self, count: int = 2) -> list[str]:
        ds = self.datasets or self.build_datasets()
        out = []
        for si, sc in enumerate(ds.eval[:count]):
            for t in (0, len(sc.grids) - 1):
                path = self.out / f"scene_{si}_t{t}.ppm"
                write_ppm(path, render_bev(sc.grids[t]))
                out.append(str(path))
        return out

    def run_all(self) -> EvalReport:
        self.build_datasets()
        self.stage_tokenizer()
        self.stage_pretrain()
        self.stage_tune()
        report = self.run_evals()
        self.render_samples()
        self.save_manifest()
        return report
