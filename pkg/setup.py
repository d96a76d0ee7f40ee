import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="hand",
    version="0.0.1",
    author="HAND Authors",
    description="Handwritten text recognition with layout analysis \
                from line images up to multi-page documents.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests", "examples*"]),
    python_requires=">=3.7",
    install_requires=[
        'numpy>=1.20',
        'scipy',
        'lxml',
        'Pillow>=9.1',
        'networkx',
        'tqdm',
    ],
    setup_requires=["pytest-runner"],
    tests_require=[
        'pytest',
    ],
    extras_require={
        'test': ['pytest', 'jiwer'],
    },
    entry_points={
        'console_scripts': ['hand=hand.__main__:main'],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: ISC License",
        "Operating System :: OS Independent",
    ],
)
