"""Hierarchical WSI report generation: local-global encoding, cross-modal
memory, beam decoding, NLG/survival metrics and the experiment drivers.

The heavy lifting lives in the compiled `_histgen` extension; this package
adds dict-friendly config handling on top of the JSON-string API.
"""

import json as _json

from histgen._histgen import (  # noqa: F401
    BOS,
    EOS,
    PAD,
    UNK,
    Model,
    Vocabulary,
    __version__,
    accuracy,
    auc,
    bleu,
    c_index,
    default_config_json,
    evaluate_corpus,
    load_feature_bag,
    meteor_exact,
    rouge_l,
    tokenize,
    validate_config_json,
    write_feature_bag,
)
from histgen import _histgen as _impl


def default_config():
    """The published model settings as a nested dict."""
    return _json.loads(default_config_json())


def _merge(base, overrides):
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def make_config(**overrides):
    """Defaults with nested overrides, e.g. make_config(encoder={"region_size": 64})."""
    return _merge(default_config(), overrides)


def _as_json(config):
    if isinstance(config, str):
        return config
    return _json.dumps(config)


def run_synth(config, out_dir):
    return _impl.run_synth(_as_json(config), out_dir)


def run_train(config, manifest, out_dir):
    return _impl.run_train(_as_json(config), manifest, out_dir)


def run_generate(checkpoint, manifest, split, out_path, beam_override=0, attention_out=""):
    return _impl.run_generate(checkpoint, manifest, split, out_path, beam_override,
                              attention_out)


def run_eval_nlg(generations, references, out_dir):
    return _impl.run_eval_nlg(generations, references, out_dir)


def run_ablate(config, manifest, out_dir):
    return _impl.run_ablate(_as_json(config), manifest, out_dir)


def run_region_sweep(config, manifest, out_dir, region_sizes=(64, 96, 128, 256, 384, 512)):
    return _impl.run_region_sweep(_as_json(config), manifest, out_dir, list(region_sizes))


def run_finetune(config, checkpoint, manifest, out_dir, survival=False, with_scratch=False):
    return _impl.run_finetune(_as_json(config), checkpoint, manifest, out_dir, survival,
                              with_scratch)
