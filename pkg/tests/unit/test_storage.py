"""Tests for feature arrays, images, views and checkpoints on disk"""

import numpy as np
import pytest
import torch

from featup.core.errors import (
    CheckpointFormatError,
    DimensionError,
    FormatError,
    MissingViewError,
    UnsupportedDtypeError,
)
from featup.schemas.training import TrainConfig
from featup.services.synthetic import synth_generate
from featup.services.trainer import (
    CorpusItem,
    InMemoryViewProvider,
    build_implicit_checkpoint,
    build_jbu_checkpoint,
    train_implicit,
    train_jbu,
    upsample,
)
from featup.storage.atomic import atomic_write
from featup.storage.checkpoint import (
    MAGIC,
    checkpoint_bytes,
    checkpoint_tensors,
    load_checkpoint,
    load_checkpoint_bytes,
    save_checkpoint,
)
from featup.storage.images import read_png, to_uint8, write_png
from featup.storage.npy import read_npy, write_npy
from featup.storage.views import DirectoryViewProvider, load_corpus, load_image_dir, write_views


class TestNpy:
    """Tests for the .npy feature container"""

    def test_write_then_read(self, tmp_path):
        """Test a written map reads back unchanged"""
        fm = torch.randn(3, 4, 5)
        write_npy(fm, tmp_path / "f.npy")
        assert torch.equal(read_npy(tmp_path / "f.npy"), fm)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_maps_round_trip_bitwise(self, tmp_path, seed):
        """Test seeded random shapes and values survive a write and read exactly"""
        gen = torch.Generator().manual_seed(seed)
        c, h, w = (int(v) for v in torch.randint(1, 9, (3,), generator=gen))
        fm = torch.randn(c, h, w, generator=gen) * 10 ** float(torch.randint(-3, 4, (1,), generator=gen))
        write_npy(fm, tmp_path / "f.npy")
        loaded = read_npy(tmp_path / "f.npy")
        assert loaded.shape == (c, h, w)
        assert loaded.numpy().tobytes() == fm.numpy().tobytes()

    def test_reads_numpy_saved_arrays(self, tmp_path):
        """Test files produced by numpy itself, including a batch of one"""
        array = np.arange(24, dtype="<f4").reshape(1, 2, 3, 4)
        np.save(tmp_path / "batch.npy", array)
        fm = read_npy(tmp_path / "batch.npy")
        assert fm.shape == (2, 3, 4)
        assert fm[1, 2, 3].item() == 23.0

    @pytest.mark.parametrize("dtype", [">f4", "<f8", "<i4"])
    def test_rejects_other_dtypes(self, tmp_path, dtype):
        """Test only little-endian float32 is accepted"""
        np.save(tmp_path / "bad.npy", np.zeros((1, 2, 2), dtype=dtype))
        with pytest.raises(UnsupportedDtypeError, match="<f4"):
            read_npy(tmp_path / "bad.npy")

    def test_rejects_fortran_order(self, tmp_path):
        """Test column-major arrays are refused"""
        np.save(tmp_path / "f.npy", np.asfortranarray(np.zeros((2, 3, 4), dtype="<f4")))
        with pytest.raises(FormatError, match="Fortran"):
            read_npy(tmp_path / "f.npy")

    def test_rejects_truncated_payload(self, tmp_path):
        """Test short payloads are detected"""
        path = tmp_path / "f.npy"
        write_npy(torch.zeros(2, 3, 3), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError, match="payload"):
            read_npy(path)

    def test_rejects_non_npy(self, tmp_path):
        """Test arbitrary bytes are not an array file"""
        path = tmp_path / "f.npy"
        path.write_bytes(b"definitely not numpy")
        with pytest.raises(FormatError):
            read_npy(path)

    @pytest.mark.parametrize("shape", [(4, 4), (2, 1, 3, 3)])
    def test_rejects_bad_ranks(self, tmp_path, shape):
        """Test 2-D arrays and real batches"""
        np.save(tmp_path / "f.npy", np.zeros(shape, dtype="<f4"))
        with pytest.raises(DimensionError):
            read_npy(tmp_path / "f.npy")


class TestImages:
    """Tests for PNG guidance images"""

    def test_write_then_read(self, tmp_path, random_image):
        """Test PNG storage keeps 8-bit quantized values"""
        write_png(random_image, tmp_path / "img.png")
        image = read_png(tmp_path / "img.png")
        assert image.shape == (3, 16, 16)
        expected = torch.from_numpy(to_uint8(random_image)).permute(2, 0, 1).float() / 255.0
        assert torch.equal(image, expected)

    def test_rejects_garbage(self, tmp_path):
        """Test undecodable files raise FormatError"""
        path = tmp_path / "img.png"
        path.write_bytes(b"\x89PNG broken")
        with pytest.raises(FormatError):
            read_png(path)

    def test_to_uint8_shape_check(self):
        """Test only 3-channel images are converted"""
        with pytest.raises(DimensionError):
            to_uint8(torch.zeros(1, 4, 4))


def test_atomic_write_keeps_target_on_failure(tmp_path):
    """Test a failed write leaves the old file and no temp files"""
    target = tmp_path / "out.bin"
    target.write_bytes(b"old")
    with pytest.raises(RuntimeError):
        with atomic_write(target) as handle:
            handle.write(b"new")
            raise RuntimeError("interrupted")
    assert target.read_bytes() == b"old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.bin"]


class TestViews:
    """Tests for view directories and corpora"""

    def test_directory_provider(self, tmp_path, tiny_sample):
        """Test every written view is served back by transform"""
        manifest = write_views(tmp_path / "views", tiny_sample.views, 32, 32)
        provider = DirectoryViewProvider(tmp_path / "views")
        assert len(provider.transforms()) == len(tiny_sample.views)
        assert provider.manifest.identity == manifest.identity
        for t, fm in tiny_sample.views:
            assert torch.equal(provider.view(t), fm)
        assert torch.equal(provider.identity(), tiny_sample.features)

    def test_accepts_image_directory(self, tmp_path, tiny_sample):
        """Test an image directory resolves to its views/ subdirectory"""
        write_views(tmp_path / "views", tiny_sample.views, 32, 32)
        assert DirectoryViewProvider(tmp_path).views_dir == tmp_path / "views"

    def test_missing_view_file(self, tmp_path, tiny_sample):
        """Test a deleted view file raises MissingViewError"""
        write_views(tmp_path, tiny_sample.views, 32, 32)
        t = tiny_sample.views[1][0]
        (tmp_path / f"{t.digest()}.npy").unlink()
        with pytest.raises(MissingViewError):
            DirectoryViewProvider(tmp_path).view(t)

    def test_requires_identity(self, tmp_path, tiny_sample):
        """Test view sets without an identity view are refused"""
        with pytest.raises(MissingViewError):
            write_views(tmp_path, tiny_sample.views[1:], 32, 32)

    def test_missing_manifest(self, tmp_path):
        """Test directories without a manifest"""
        with pytest.raises(FileNotFoundError):
            DirectoryViewProvider(tmp_path)

    def test_malformed_manifest(self, tmp_path):
        """Test unreadable manifests raise FormatError"""
        (tmp_path / "manifest.json").write_text("{not json")
        with pytest.raises(FormatError):
            DirectoryViewProvider(tmp_path)

    def test_generated_corpus_loads(self, tmp_path):
        """Test synthesized corpora load back as training items"""
        manifest = synth_generate(seed=3, hi_res=32, channels=4, num_images=2, out_dir=tmp_path, num_views=2, max_pad=4, max_zoom=1.5)
        corpus = load_corpus(tmp_path)
        assert len(corpus) == len(manifest.images) == 2
        item = corpus[0]
        assert item.image.shape == (3, 32, 32)
        assert item.features.shape == (4, 2, 2)
        assert len(item.views.transforms()) == 3
        assert torch.equal(load_image_dir(tmp_path / manifest.images[0].name).features, item.features)


class TestCheckpoint:
    """Tests for the checkpoint container"""

    @pytest.fixture
    def implicit_checkpoint(self, tiny_sample, tiny_provider):
        cfg = TrainConfig.implicit(steps=2, kernel_size=16, hidden_dim=8, jitters_per_image=2)
        return train_implicit(tiny_sample.image, tiny_provider, cfg)

    def test_implicit_save_then_load(self, tmp_path, tiny_sample, implicit_checkpoint):
        """Test a reloaded implicit checkpoint upsamples identically"""
        path = save_checkpoint(implicit_checkpoint, tmp_path / "model.ckpt")
        loaded = load_checkpoint(path)
        assert loaded.kind == "implicit"
        assert loaded.config == implicit_checkpoint.config
        assert loaded.feature_shape == (4, 2, 2)
        assert loaded.transform_seeds == implicit_checkpoint.transform_seeds
        assert torch.equal(loaded.loss_trace, implicit_checkpoint.loss_trace)
        before = upsample(implicit_checkpoint, tiny_sample.image, None, 32, 32)
        after = upsample(loaded, tiny_sample.image, None, 32, 32)
        assert torch.equal(before, after)

    def test_jbu_save_then_load(self, tmp_path, tiny_sample):
        """Test a reloaded JBU checkpoint keeps its stage count and weights"""
        corpus = [CorpusItem.from_provider(tiny_sample.image, InMemoryViewProvider(tiny_sample.views))]
        checkpoint = train_jbu(corpus, TrainConfig.jbu(steps=1, proj_dim=4, kernel_size=16, images_per_batch=1))
        loaded = load_checkpoint_bytes(checkpoint_bytes(checkpoint))
        assert loaded.kind == "jbu"
        assert loaded.num_stages == checkpoint.num_stages
        for a, b in zip(checkpoint.stack.parameters(), loaded.stack.parameters()):
            assert torch.equal(a, b)

    def test_bad_magic(self, implicit_checkpoint):
        """Test foreign files are rejected"""
        payload = checkpoint_bytes(implicit_checkpoint)
        assert payload.startswith(MAGIC)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint_bytes(b"XXXX" + payload[4:])

    def test_truncated(self, implicit_checkpoint):
        """Test missing payload bytes are detected"""
        payload = checkpoint_bytes(implicit_checkpoint)
        with pytest.raises(CheckpointFormatError):
            load_checkpoint_bytes(payload[:-8])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint_bytes(payload[:6])

    def test_kind_tag_mismatch(self, implicit_checkpoint):
        """Test the binary kind tag must agree with the manifest"""
        payload = bytearray(checkpoint_bytes(implicit_checkpoint))
        payload[8] = 1
        with pytest.raises(CheckpointFormatError, match="kind"):
            load_checkpoint_bytes(bytes(payload))


def _random_checkpoint(seed):
    """Seeded checkpoint of either kind with randomized weights, trace and seeds"""
    gen = torch.Generator().manual_seed(seed)

    def draw(low, high):
        return int(torch.randint(low, high, (1,), generator=gen))

    if seed % 2 == 0:
        factor = 2 ** draw(1, 3)
        c, h, w = draw(1, 6), draw(2, 5), draw(2, 5)
        cfg = TrainConfig.implicit(seed=seed, kernel_size=3, hidden_dim=draw(2, 8), explicit=seed % 4 == 0)
        image = torch.rand(3, h * factor, w * factor, generator=gen)
        checkpoint = build_implicit_checkpoint(image, torch.randn(c, h, w, generator=gen), cfg)
    else:
        cfg = TrainConfig.jbu(seed=seed, proj_dim=draw(1, 6), kernel_size=3, range_mode=("softmax", "euclidean", "cosine")[seed % 3])
        checkpoint = build_jbu_checkpoint(draw(1, 4), cfg)
    with torch.no_grad():
        for module in checkpoint.modules().values():
            for parameter in module.parameters():
                parameter.copy_(torch.randn(parameter.shape, generator=gen))
    checkpoint.loss_trace = torch.randn(draw(0, 5), 3, generator=gen)
    checkpoint.transform_seeds = [draw(0, 2 ** 31 - 1) for _ in range(draw(0, 4))]
    return checkpoint


@pytest.mark.parametrize("seed", range(20))
def test_random_checkpoints_round_trip_bitwise(seed):
    """Test every stored tensor and the serialized bytes survive a reload"""
    checkpoint = _random_checkpoint(seed)
    payload = checkpoint_bytes(checkpoint)
    loaded = load_checkpoint_bytes(payload)
    assert checkpoint_bytes(loaded) == payload
    assert loaded.config == checkpoint.config
    assert loaded.transform_seeds == checkpoint.transform_seeds
    original, reloaded = checkpoint_tensors(checkpoint), checkpoint_tensors(loaded)
    assert list(original) == list(reloaded)
    for name, value in original.items():
        assert torch.equal(reloaded[name], value), name
