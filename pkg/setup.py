#!/usr/bin/env python3

from setuptools import setup, find_packages

with open("README.md", "r") as fh:
    long_description = fh.read()

with open("requirements.txt", "r") as fh:
    requirements = [
        line.strip() for line in fh.readlines()
        if line.strip() and not line.strip().startswith("#")
    ]

setup(
    name="brain-nwp-attribution",
    version="0.1.0",
    description="Input attributions for brain alignment vs next-word prediction in toy language models",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    py_modules=["brain_attrib"],
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.11",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.10",
    install_requires=requirements,
    entry_points={
        "console_scripts": [
            "brain-attrib=src.cli:main",
        ],
    },
)
