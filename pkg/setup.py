#!/usr/bin/env python
# -*- coding: utf-8 -*-

from setuptools import setup, find_packages, Command
from shutil import rmtree
import glob
import sys
import os

here = os.path.abspath(os.path.dirname(__file__))
NAME = 'epicalib'
REQUIRES_PYTHON = '>=3.8.0'
REQUIRED_DEP = ['numpy>=1.21.0', 'scipy>=1.7.0', 'pandas>=1.5.0', 'PyYAML>=6.0',
                'tqdm>=4.62.0', 'tabulate>=0.8.0', 'termcolor>=1.1.0']
TEST_DEP = ['pytest>=7.0']
about = {}

with open(os.path.join(here, 'libs', '__init__.py')) as f:
    exec(f.read(), about)

with open("README.md", "rb") as readme_file:
    readme = readme_file.read().decode("UTF-8")

with open("HISTORY.rst", "rb") as history_file:
    history = history_file.read().decode("UTF-8")


class UploadCommand(Command):
    """Support setup.py upload."""

    description = 'Build and publish the package.'

    user_options = []

    @staticmethod
    def status(s):
        """Prints things in bold."""
        print('\033[1m{0}\033[0m'.format(s))

    def initialize_options(self):
        pass

    def finalize_options(self):
        pass

    def run(self):
        try:
            self.status('Removing previous builds…')
            rmtree(os.path.join(here, 'dist'))
        except OSError:
            self.status('Fail to remove previous builds..')
            pass

        self.status('Building Source and Wheel distribution…')
        os.system(
            '{0} setup.py sdist bdist_wheel'.format(sys.executable))

        self.status('Uploading the package to PyPI via Twine…')
        os.system('twine upload dist/*')

        self.status('Pushing git tags…')
        os.system('git tag -d v{0}'.format(about['__version__']))
        os.system('git tag v{0}'.format(about['__version__']))

        sys.exit()


setup(
    name=NAME,
    version=about['__version__'],
    description="Windowed sequential importance sampling calibration of a checkpointed stochastic SEIR simulator",
    long_description=readme + '\n\n' + history,
    long_description_content_type='text/markdown',
    python_requires=REQUIRES_PYTHON,
    packages=find_packages(exclude=['tests', 'examples', 'examples.*']),
    py_modules=['EpiCalib'],
    entry_points={
        'console_scripts': [
            'epicalib=EpiCalib:main'
        ]
    },
    data_files=[('configs', sorted(glob.glob('configs/*.cfg')))],
    install_requires=REQUIRED_DEP,
    extras_require={'test': TEST_DEP},
    license="MIT license",
    zip_safe=False,
    keywords='epidemic calibration importance-sampling SEIR checkpoint',
    classifiers=[
        'Development Status :: 4 - Beta',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    # $ setup.py publish support.
    cmdclass={
        'upload': UploadCommand,
    }
)
