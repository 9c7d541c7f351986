import setuptools


with open('README.md', 'r') as f:
    long_description = f.read()

setup_kwargs = {
    'name': 'dynfusion',
    'version': '0.1.0',
    'description': 'dynamic attention fusion of text, audio and video features for multimodal sentiment regression, with ablation, ROC and gradient checking tools',
    'long_description': long_description,
    'long_description_content_type': 'text/markdown',
    'license': 'AGPL-3.0-or-later',
    'packages': setuptools.find_namespace_packages('src'),
    'package_dir': {'': 'src'},
    'include_package_data': True,
    'install_requires': [
        'jinja2',
        'numpy',
        'pyyaml'
    ],
    'extras_require': {
        'test': [
            'pytest'
        ]
    },
    'entry_points': '''
        [console_scripts]
        dynfusion=dynfusion.cli:main
    ''',
    'classifiers': [
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Operating System :: OS Independent',
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Artificial Intelligence'
    ],
    'python_requires': '>=3.9',
    'keywords': 'multimodal sentiment attention fusion autodiff ablation',
}


if __name__ == '__main__':
    setuptools.setup(**setup_kwargs)
