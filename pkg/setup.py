from setuptools import setup, find_packages

import os

# Read version from __version__.py
with open(os.path.join("entityprobes", "__version__.py")) as f:
    exec(f.read())

setup(
    name="entity-probes",
    version=__version__,
    description="Probing tasks, linear probes and an entity-linking harness for entity embeddings",
    packages=find_packages(include=["entityprobes", "entityprobes.*"]),
    install_requires=[
        "numpy>=1.20",
        "pandas>=1.5",
        "plotly",
        "tqdm"
    ],
    extras_require={
        "test": ["pytest>=7.0", "pytest-cov>=4.0", "pytest-mock>=3.10"],
    },
    entry_points={
        "console_scripts": ["entity-probes=entityprobes.cli:main"],
    },
    python_requires=">=3.8",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
    keywords=["entity embeddings", "probing", "knowledge graph", "entity linking"],
)
