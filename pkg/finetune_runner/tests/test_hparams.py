import pytest

from finetune_runner.hparams import HParams, HParamsError, load_hparams

# byte-for-byte what the upstream pipeline emits with default settings
EMITTED = """\
# finetuning hyperparameters
# schedule refers to the learning rate; weight decay itself is zero
precision = "bfloat16"
epochs = 2
learning_rate = 5e-06
warmup_ratio = 0.03
schedule = "linear_decay"
max_seq_len = 128
batch_size = 128
"""


def _load(tmp_path, text):
    path = tmp_path / "hparams.toml"
    path.write_text(text, encoding="utf-8")
    return load_hparams(path)


class TestLoad:
    def test_emitted_file_parses_to_defaults(self, tmp_path):
        assert _load(tmp_path, EMITTED) == HParams()

    def test_partial_file_fills_defaults(self, tmp_path):
        hp = _load(tmp_path, "epochs = 7\n")
        assert hp.epochs == 7
        assert hp.learning_rate == 5e-6

    def test_int_accepted_for_float_key(self, tmp_path):
        hp = _load(tmp_path, "warmup_ratio = 0\n")
        assert hp.warmup_ratio == 0.0

    def test_comments_and_blanks_ignored(self, tmp_path):
        hp = _load(tmp_path, "\n# note\n\nepochs = 3\n")
        assert hp.epochs == 3

    @pytest.mark.parametrize(
        "text",
        [
            "epochs 3\n",
            "epochs = \n",
            '= "x"\n',
            "epochs = 2\nepochs = 3\n",
            "unknown_key = 1\n",
            'epochs = "2"\n',
            "precision = 7\n",
            'precision = "broken\n',
            "learning_rate = maybe\n",
        ],
    )
    def test_malformed_rejected(self, tmp_path, text):
        with pytest.raises(HParamsError):
            _load(tmp_path, text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_hparams(tmp_path / "absent.toml")


class TestValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"precision": "fp8"},
            {"schedule": "cosine"},
            {"epochs": 0},
            {"batch_size": 0},
            {"max_seq_len": 0},
            {"learning_rate": 0.0},
            {"warmup_ratio": 1.0},
            {"warmup_ratio": -0.1},
        ],
    )
    def test_bad_values(self, kwargs):
        with pytest.raises(HParamsError):
            HParams(**kwargs)

    def test_float32_allowed(self):
        assert HParams(precision="float32").precision == "float32"
