#!/usr/bin/env python3

from glob import glob

from setuptools import setup

# for your packages to be recognized by python
setup(
 name='memalign',
 version='0.1.0',
 description='memory based visually similar pair alignment for cross domain object detection',
 packages=['memalign', 'memalign.aligners', 'memalign.tools', 'memalign.visualisation', 'memalign.test'],
 package_dir={'memalign': 'src/memalign'},
 python_requires='>=3.8',
 install_requires=['numpy', 'PyYAML', 'matplotlib', 'scikit-learn'],
 extras_require={'test': ['pytest']},
 data_files=[(f'share/memalign/config/{concern}', glob(f'config/{concern}/*.yaml'))
             for concern in ('synthgen', 'trainer', 'ablation')],
 scripts=['scripts/memalign_cli.py'],
 entry_points={'console_scripts': ['memalign = memalign.cli:main']},
)
