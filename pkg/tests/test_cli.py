"""End-to-end tests of the osm command line on tiny sandbox experiments."""

import json
import os

import pandas as pd
import pytest

from cli import main

ROOT = os.path.join(os.path.dirname(__file__), '..')

# Overrides of these sections update single fields; any other key is replaced whole
MERGED_SECTIONS = ('model', 'train', 'data', 'openmax')


def write_config(directory, name='experiment.json', **overrides):
    """A 32x32 sandbox experiment small enough to train in seconds."""
    document = {
        'model': {
            'input_height': 32, 'input_width': 32, 'num_classes': 3,
            'backbone_stage_channels': [8, 16], 'patch_size': 2, 'embed_dim': 16,
            'num_blocks': 1, 'num_heads': 2, 'mlp_ratio': 2.0, 'architecture': 'backbone_vit_fcn',
        },
        'train': {'learning_rate': 1e-3, 'batch_size': 16, 'epochs': 2, 'resplit_interval': 2,
                  'val_fraction': 0.2, 'seed': 0},
        'split': {'name': 'sandbox', 'num_in_set': 3},
        'data': {'synthetic': {'image_size': 32, 'num_classes': 4, 'samples_per_class': 20, 'seed': 0}},
        'strategies': ['msp', 'mls'],
        'openmax': {'tail_size': 5},
        'output_dir': str(directory / 'run'),
    }
    for key, value in overrides.items():
        if key in MERGED_SECTIONS:
            document[key] = dict(document[key], **value)
        else:
            document[key] = value
    path = directory / name
    path.write_text(json.dumps(document))
    return str(path)


def read_metrics(run_dir):
    with open(os.path.join(run_dir, 'metrics.jsonl')) as f:
        return [json.loads(line) for line in f]


def test_generate(tmp_path):
    config = write_config(tmp_path)
    assert main(['generate', '--config', config]) == 0
    assert os.path.isfile(tmp_path / 'run' / 'manifest.json')
    assert len(os.listdir(tmp_path / 'run' / 'images')) == 80
    assert os.path.isfile(tmp_path / 'run' / 'run.log')


def test_generate_into_unwritable_directory(tmp_path):
    blocker = tmp_path / 'blocker'
    blocker.write_text('not a directory')
    assert main(['generate', '--config', write_config(tmp_path), '--out', str(blocker / 'run')]) == 1


def test_invalid_config_is_a_user_error(tmp_path):
    config = write_config(tmp_path, model={'patch_size': 3})
    assert main(['train', '--config', config]) == 1
    (tmp_path / 'broken.json').write_text('{"model": ')
    assert main(['train', '--config', str(tmp_path / 'broken.json')]) == 1


def test_split_with_unknown_class(tmp_path):
    config = write_config(tmp_path, split={'name': 'bad', 'in_set': [0, 1, 9], 'out_of_set': [3]})
    assert main(['train', '--config', config]) == 1


def test_split_cannot_mix_sandbox_count_and_lists(tmp_path):
    split = {'name': 'bad', 'num_in_set': 3, 'in_set': [0, 1, 9], 'out_of_set': [3]}
    config = write_config(tmp_path, split=split)
    with open(config) as f:
        assert json.load(f)['split'] == split
    assert main(['train', '--config', config]) == 1
    assert not os.path.exists(tmp_path / 'run' / 'checkpoint.pt')


def test_num_classes_must_match_split(tmp_path):
    config = write_config(tmp_path, split={'name': 'sandbox', 'num_in_set': 2})
    assert main(['train', '--config', config]) == 1


def test_train_resume_and_eval(tmp_path):
    config = write_config(tmp_path)
    run_dir = str(tmp_path / 'run')
    assert main(['train', '--config', config]) == 0
    assert os.path.isfile(os.path.join(run_dir, 'checkpoint.pt'))
    assert [r['epoch'] for r in read_metrics(run_dir)] == [1, 2]

    longer = write_config(tmp_path, name='longer.json', train={'epochs': 3})
    assert main(['train', '--config', longer, '--resume', os.path.join(run_dir, 'checkpoint.pt')]) == 0
    assert [r['epoch'] for r in read_metrics(run_dir)] == [1, 2, 3]

    only_mls = write_config(tmp_path, name='mls.json', strategies=['mls'])
    assert main(['eval', '--config', only_mls]) == 0
    assert not os.path.exists(os.path.join(run_dir, 'openmax.json'))
    with open(os.path.join(run_dir, 'report.json')) as f:
        report = json.load(f)
    assert set(report['auc_by_strategy']) == {'mls'}
    assert 0.0 <= report['auc_by_strategy']['mls'] <= 1.0
    assert report['num_open_test'] == 4
    roc = pd.read_csv(os.path.join(run_dir, 'roc_mls.csv'))
    assert list(roc.columns) == ['threshold', 'fpr', 'tpr']
    assert os.path.isfile(os.path.join(run_dir, 'report.html'))

    first = (tmp_path / 'run' / 'report.json').read_bytes()
    assert main(['eval', '--config', only_mls]) == 0
    assert (tmp_path / 'run' / 'report.json').read_bytes() == first

    incompatible = write_config(tmp_path, name='p4.json', model={'patch_size': 4})
    assert main(['eval', '--config', incompatible]) == 1


def test_resume_with_different_architecture(tmp_path):
    config = write_config(tmp_path)
    assert main(['train', '--config', config]) == 0
    other = write_config(tmp_path, name='other.json', model={'embed_dim': 8}, train={'epochs': 3})
    checkpoint = str(tmp_path / 'run' / 'checkpoint.pt')
    assert main(['train', '--config', other, '--resume', checkpoint]) == 1


def test_eval_with_openmax(tmp_path):
    config = write_config(
        tmp_path, strategies=['msp', 'mls', 'openmax'], openmax={'tail_size': 3},
        train={'epochs': 12, 'batch_size': 8, 'learning_rate': 3e-3},
    )
    assert main(['train', '--config', config]) == 0
    assert main(['eval', '--config', config]) == 0

    run_dir = tmp_path / 'run'
    assert os.path.isfile(run_dir / 'openmax.json')
    activations = pd.read_csv(run_dir / 'activations.csv')
    assert list(activations.columns[:3]) == ['sample_id', 'true_label', 'pred_label']
    assert len(activations) == 48

    with open(run_dir / 'report.json') as f:
        report = json.load(f)
    assert set(report['auc_by_strategy']) == {'msp', 'mls', 'openmax'}
    assert 0.0 <= report['auc_by_strategy']['openmax'] <= 1.0
    assert os.path.isfile(run_dir / 'roc_openmax.csv')


def test_reseeded_run_regenerates_sandbox(tmp_path):
    config = write_config(tmp_path, train={'epochs': 1})
    run_dir = tmp_path / 'run'
    assert main(['generate', '--config', config]) == 0
    first = (run_dir / 'images' / 'c01_0000.png').read_bytes()

    assert main(['train', '--config', config, '--seed', '7']) == 0
    with open(run_dir / 'manifest.json') as f:
        assert json.load(f)['metadata']['generator']['seed'] == 7
    assert (run_dir / 'images' / 'c01_0000.png').read_bytes() != first

    # Same settings again: the files are reused as they are
    reseeded = (run_dir / 'images' / 'c01_0000.png').stat().st_mtime_ns
    assert main(['train', '--config', config, '--seed', '7']) == 0
    assert (run_dir / 'images' / 'c01_0000.png').stat().st_mtime_ns == reseeded


def test_sweep_patch_size(tmp_path):
    config = write_config(tmp_path, train={'epochs': 1})
    assert main(['sweep', '--config', config, '--axis', 'patch_size']) == 0

    summary = pd.read_csv(tmp_path / 'run' / 'sweep_summary.csv')
    assert summary['variant'].tolist() == [1, 2, 4]
    assert {'closed_accuracy', 'auc_msp', 'auc_mls', 'num_seeds'} <= set(summary.columns)
    with open(tmp_path / 'run' / 'sweep_metadata.json') as f:
        assert json.load(f)['axis'] == 'patch_size'


def test_sweep_rejects_invalid_values(tmp_path):
    config = write_config(tmp_path, train={'epochs': 1})
    assert main(['sweep', '--config', config, '--axis', 'patch_size', '--values', '3', '5']) == 1
    assert not os.path.exists(tmp_path / 'run' / 'sweep.csv')


@pytest.mark.slow
def test_sandbox_end_to_end(tmp_path):
    config = os.path.join(ROOT, 'configs', 'sandbox.json')
    out = str(tmp_path / 'sandbox')
    assert main(['train', '--config', config, '--out', out]) == 0
    assert main(['eval', '--config', config, '--out', out]) == 0

    with open(os.path.join(out, 'report.json')) as f:
        report = json.load(f)
    assert report['closed_accuracy'] >= 0.90
    assert report['auc_by_strategy']['mls'] >= 0.80
    for strategy in ('msp', 'mls', 'openmax'):
        assert os.path.isfile(os.path.join(out, f'roc_{strategy}.csv'))


@pytest.mark.slow
def test_architecture_ablation_direction(tmp_path):
    config = os.path.join(ROOT, 'configs', 'sandbox.json')
    out = tmp_path / 'ablation'
    args = ['sweep', '--config', config, '--out', str(out), '--axis', 'architecture',
            '--values', 'backbone', 'backbone_vit', '--seeds', '0', '1', '2']
    assert main(args) == 0

    summary = pd.read_csv(out / 'sweep_summary.csv').set_index('variant')
    assert summary.loc['backbone_vit', 'num_seeds'] == 3
    assert summary.loc['backbone_vit', 'auc_mls'] >= summary.loc['backbone', 'auc_mls']
