import os
import re
from setuptools import setup, find_packages

current_path = os.path.abspath(os.path.dirname(__file__))


def read_file(*parts):
    with open(os.path.join(current_path, *parts), 'r', encoding='utf-8') as reader:
        return reader.read()


def get_requirements(*parts):
    with open(os.path.join(current_path, *parts), 'r', encoding='utf-8') as reader:
        return [line.strip() for line in reader.readlines() if line.strip()]


def find_version(*file_paths):
    version_file = read_file(*file_paths)
    version_match = re.search(
        r"^__version__ = ['\"]([^'\"]*)['\"]", version_file, re.M)
    if version_match:
        return version_match.group(1)
    raise RuntimeError('Unable to find version string.')


setup(
    name='censurv',
    version=find_version('censurv', '__init__.py'),
    packages=find_packages(exclude=('tests', 'example')),
    license='Apache License 2.0',
    description='Multimodal survival prediction with bipartite modality graphs and censoring modelling',
    long_description=read_file('README.md'),
    long_description_content_type='text/markdown',
    python_requires='>=3.7',
    install_requires=get_requirements('requirements.txt'),
    extras_require={
        'test': ['pytest>=6.0', 'lifelines>=0.26'],
    },
    entry_points={
        'console_scripts': ['censurv=censurv.cli:main'],
    },
    classifiers=(
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: Apache Software License",
        "Operating System :: OS Independent",
    ),
)
