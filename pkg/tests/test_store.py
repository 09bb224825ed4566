"""Checkpoint and adapter file format tests."""

import numpy as np
import pytest

from styleswap import data as sd
from styleswap import model as mdl
from styleswap import store
from styleswap.autograd import Tensor


def small_config(**over):
    base = dict(vocab_size=30, d_model=16, n_heads=2, d_ffn=20, n_enc_layers=1,
                n_dec_layers=2, adapter_bottleneck=4, max_len=12, seed=3)
    base.update(over)
    return mdl.ModelConfig(**base)


def toy_config():
    return mdl.ModelConfig()  # the full-size defaults


class TestCheckpoint:
    def test_roundtrip_within_storage_tolerance(self, tmp_path):
        model = mdl.build_model(small_config())
        store.save_checkpoint(model, tmp_path / "m.ckpt")
        back = store.load_checkpoint(tmp_path / "m.ckpt")
        assert back.config == model.config
        assert back.base_id == model.base_id
        for name, t in model.params.items():
            orig = t.data
            got = back.params[name].data
            denom = np.maximum(np.abs(orig), 1e-12)
            assert np.max(np.abs(got - orig) / denom) < 1e-6

    def test_save_load_save_byte_identical(self, tmp_path):
        model = mdl.build_model(small_config())
        store.save_checkpoint(model, tmp_path / "a.ckpt")
        back = store.load_checkpoint(tmp_path / "a.ckpt")
        store.save_checkpoint(back, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_logits_close_after_roundtrip(self, tmp_path):
        model = mdl.build_model(small_config())
        mdl.swap_adapters(model, mdl.fresh_adapters(model.config, "s0"))
        store.save_checkpoint(model, tmp_path / "m.ckpt")
        back = store.load_checkpoint(tmp_path / "m.ckpt")
        mdl.swap_adapters(back, mdl.fresh_adapters(back.config, "s0"))
        rng = np.random.default_rng(0)
        for _ in range(5):
            src = list(rng.integers(1, 30, size=4))
            prefix = list(rng.integers(1, 30, size=3))
            a = mdl.decode_step(model, mdl.encode(model, src), prefix).data
            b = mdl.decode_step(back, mdl.encode(back, src), prefix).data
            assert np.max(np.abs(a - b)) < 1e-5

    def test_corrupt_byte_detected(self, tmp_path):
        model = mdl.build_model(small_config())
        path = tmp_path / "m.ckpt"
        store.save_checkpoint(model, path)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0x01
        path.write_bytes(bytes(raw))
        with pytest.raises(store.StoreError, match="checksum"):
            store.load_checkpoint(path)

    def test_version_mismatch_detected(self, tmp_path):
        import hashlib
        import struct

        model = mdl.build_model(small_config())
        path = tmp_path / "m.ckpt"
        store.save_checkpoint(model, path)
        raw = bytearray(path.read_bytes())[:-32]
        raw[4:8] = struct.pack("<I", 99)
        raw += hashlib.sha256(bytes(raw)).digest()
        path.write_bytes(bytes(raw))
        with pytest.raises(store.StoreError, match="version"):
            store.load_checkpoint(path)

    def test_missing_parameter_name_detected(self, tmp_path):
        model = mdl.build_model(small_config())
        named = [(n, t.data) for n, t in model.params.items()]
        header = {"kind": "checkpoint", "config": mdl.asdict(model.config),
                  "base_id": model.base_id}
        store._write(tmp_path / "m.ckpt", store.CKPT_MAGIC, header, named[:-1])
        with pytest.raises(store.StoreError, match="missing"):
            store.load_checkpoint(tmp_path / "m.ckpt")

    def test_lineage_survives_training_and_roundtrip(self, tmp_path):
        model = mdl.build_model(small_config())
        lineage = model.base_id
        model.params["emb.tok"].data += 0.25  # simulate fine-tuning
        store.save_checkpoint(model, tmp_path / "tuned.ckpt")
        back = store.load_checkpoint(tmp_path / "tuned.ckpt")
        assert back.base_id == lineage
        assert mdl.lineage_fingerprint(back.config, back.params) != lineage


class TestCloneModel:
    def test_clone_is_independent_copy(self):
        model = mdl.build_model(small_config())
        twin = store.clone_model(model)
        assert twin.base_bytes() == model.base_bytes()
        assert twin.base_id == model.base_id
        twin.params["emb.tok"].data += 1.0
        assert twin.base_bytes() != model.base_bytes()


class TestAdapterFiles:
    def test_roundtrip_and_install(self, tmp_path):
        model = mdl.build_model(small_config())
        adapters = mdl.fresh_adapters(model.config, "s2", seed=7, mode="denoise")
        adapters.layers[0]["w_up"].data[:] = 0.5
        store.save_adapter(adapters, model.base_id, tmp_path / "s2.adapter")
        fresh = mdl.build_model(small_config())
        loaded = store.load_adapter(tmp_path / "s2.adapter", fresh)
        assert fresh.adapters is loaded
        assert loaded.style_id == "s2" and loaded.mode == "denoise"
        assert np.allclose(loaded.layers[0]["w_up"].data, 0.5)

    def test_fingerprint_mismatch_is_hard_error(self, tmp_path):
        base_a = mdl.build_model(small_config(seed=1))
        base_b = mdl.build_model(small_config(seed=2))
        adapters = mdl.fresh_adapters(base_a.config, "s1")
        store.save_adapter(adapters, base_a.base_id, tmp_path / "a.adapter")
        with pytest.raises(store.FingerprintMismatch):
            store.load_adapter(tmp_path / "a.adapter", base_b)

    def test_adapter_loads_onto_finetuned_descendant(self, tmp_path):
        base = mdl.build_model(small_config())
        adapters = mdl.fresh_adapters(base.config, "s1")
        store.save_adapter(adapters, base.base_id, tmp_path / "s1.adapter")
        tuned = store.clone_model(base)
        tuned.params["enc.0.self.wq"].data += 0.1
        store.load_adapter(tmp_path / "s1.adapter", tuned)  # must not raise

    def test_missing_record_detected(self, tmp_path):
        model = mdl.build_model(small_config())
        adapters = mdl.fresh_adapters(model.config, "s1")
        named = list(adapters.named())[:-1]
        header = {"kind": "adapter", "style_id": "s1", "mode": "fresh",
                  "base_id": model.base_id}
        store._write(tmp_path / "bad.adapter", store.ADAPTER_MAGIC, header,
                     [(n, t.data) for n, t in named])
        with pytest.raises(store.StoreError, match="missing adapter record"):
            store.load_adapter(tmp_path / "bad.adapter", model)

    def test_wrong_magic_rejected(self, tmp_path):
        model = mdl.build_model(small_config())
        store.save_checkpoint(model, tmp_path / "m.ckpt")
        with pytest.raises(store.StoreError, match="magic"):
            store.load_adapter(tmp_path / "m.ckpt", model)

    def test_adapter_file_much_smaller_than_checkpoint(self, tmp_path):
        model = mdl.build_model(toy_config())
        adapters = mdl.fresh_adapters(model.config, "s1")
        store.save_checkpoint(model, tmp_path / "base.ckpt")
        store.save_adapter(adapters, model.base_id, tmp_path / "s1.adapter")
        ckpt = (tmp_path / "base.ckpt").stat().st_size
        adapter = (tmp_path / "s1.adapter").stat().st_size
        assert adapter <= 0.10 * ckpt
